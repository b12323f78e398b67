#include "circuitbench/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fmt/format.h>
#include <fstream>

#include "circuitbench/error.hpp"
#include "circuitbench/sha256.hpp"

namespace circuitbench {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts need byte swapping");

namespace {

class HashingWriter {
 public:
  explicit HashingWriter(std::ofstream& out) : out_(out) {}

  void write(const void* data, std::size_t size) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    hash_.update(data, size);
  }
  template <typename T>
  void put(T value) {
    write(&value, sizeof(T));
  }
  Digest finish() { return hash_.finish(); }

 private:
  std::ofstream& out_;
  Sha256 hash_;
};

class HashingReader {
 public:
  HashingReader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}

  void read(void* data, std::size_t size, const std::string& context) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (static_cast<std::size_t>(in_.gcount()) != size) {
      throw FormatError(fmt::format("{}: truncated while reading {}", path_, context));
    }
    hash_.update(data, size);
  }
  template <typename T>
  T get(const std::string& context) {
    T value{};
    read(&value, sizeof(T), context);
    return value;
  }
  Digest finish() { return hash_.finish(); }

 private:
  std::ifstream& in_;
  std::string path_;
  Sha256 hash_;
};

}  // namespace

void write_tensor_file(const std::filesystem::path& path, std::string_view magic,
                       const std::vector<NamedTensor>& tensors) {
  if (magic.size() != 8) {
    throw Error("tensor file magic must be 8 bytes");
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error("cannot open " + tmp.string() + " for writing");
    }
    out.write(magic.data(), 8);
    const std::uint32_t version = kTensorFileVersion;
    const auto count = static_cast<std::uint32_t>(tensors.size());
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&count), 4);
    HashingWriter w(out);
    for (const auto& [name, tensor] : tensors) {
      if (name.size() > 0xffff || tensor.rank() > 0xff) {
        throw Error("tensor name or rank too large: " + name);
      }
      w.put(static_cast<std::uint16_t>(name.size()));
      w.write(name.data(), name.size());
      w.put(static_cast<std::uint8_t>(tensor.rank()));
      for (auto d : tensor.shape()) {
        w.put(static_cast<std::uint64_t>(d));
      }
      w.write(tensor.data().data(), tensor.size() * sizeof(float));
    }
    const Digest digest = w.finish();
    out.write(reinterpret_cast<const char*>(digest.data()), digest.size());
    if (!out) {
      throw Error("write failed: " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path,
                                          std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open " + path.string());
  }
  const std::string where = path.string();
  char got_magic[8] = {};
  in.read(got_magic, 8);
  if (in.gcount() != 8 || std::string_view(got_magic, 8) != magic) {
    throw FormatError(fmt::format("{}: bad magic (expected \"{}\")", where, magic));
  }
  std::uint32_t version = 0;
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in) {
    throw FormatError(where + ": truncated header");
  }
  if (version != kTensorFileVersion) {
    throw FormatError(fmt::format("{}: version {} not supported (expected {})", where, version,
                                  kTensorFileVersion));
  }

  HashingReader r(in, where);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string index_ctx = fmt::format("tensor #{}", t);
    const auto name_len = r.get<std::uint16_t>(index_ctx + " name length");
    std::string name(name_len, '\0');
    r.read(name.data(), name_len, index_ctx + " name");
    const auto rank = r.get<std::uint8_t>("rank of " + name);
    Shape shape(rank);
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>("dims of " + name));
    }
    const std::size_t n = shape_size(shape);
    if (n > (std::size_t{1} << 34)) {
      throw FormatError(fmt::format("{}: implausible size for tensor {}", where, name));
    }
    std::vector<float> data(n);
    r.read(data.data(), n * sizeof(float), "payload of tensor " + name);
    tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  const Digest computed = r.finish();
  Digest stored{};
  in.read(reinterpret_cast<char*>(stored.data()), stored.size());
  if (static_cast<std::size_t>(in.gcount()) != stored.size()) {
    throw FormatError(where + ": missing SHA-256 trailer");
  }
  if (stored != computed) {
    throw FormatError(fmt::format("{}: payload hash mismatch (stored {}, computed {})", where,
                                  to_hex(stored), to_hex(computed)));
  }
  in.peek();
  if (!in.eof()) {
    throw FormatError(where + ": trailing bytes after trailer");
  }
  return tensors;
}

}  // namespace circuitbench
