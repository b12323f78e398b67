#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "circuitbench/tensor.hpp"

namespace circuitbench {

// Flat binary tensor container, little-endian:
//
//   magic      8 bytes   ("GPT2TNSR" for model weights, "SAEPARAM" for SAEs)
//   version    u32       = 1
//   count      u32
//   count × record:
//     name_len u16, name (UTF-8, name_len bytes)
//     rank     u8, dims rank × u64
//     payload  product(dims) × f32, row-major
//   trailer    32 bytes  SHA-256 over all record bytes (everything between
//                        the header and the trailer)

inline constexpr std::string_view kModelMagic = "GPT2TNSR";
inline constexpr std::string_view kSaeMagic = "SAEPARAM";
inline constexpr std::string_view kActivationMagic = "ACTVTNSR";
inline constexpr std::uint32_t kTensorFileVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Writes to a temporary sibling and renames into place.
void write_tensor_file(const std::filesystem::path& path, std::string_view magic,
                       const std::vector<NamedTensor>& tensors);

/// Reads and verifies magic, version, structure and trailer hash.
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path,
                                          std::string_view magic);

}  // namespace circuitbench
