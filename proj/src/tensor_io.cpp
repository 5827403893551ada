#include "metawaf/tensor_io.h"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace metawaf {
namespace {

constexpr std::string_view kMagic = "MWTENSOR";
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("tensor file truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

bool NamedTensors::contains(std::string_view name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return true;
  }
  return false;
}

const Matrix& NamedTensors::at(std::string_view name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw std::out_of_range("tensor file has no tensor named " + std::string(name));
}

std::string encode_tensors(const NamedTensors& file) {
  std::string out(kMagic);
  put_le<std::uint32_t>(out, kVersion);
  const std::string meta = file.metadata.dump();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, m] : file.tensors) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m.data()[i]));
  }
  return out;
}

NamedTensors decode_tensors(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kMagic.size()) != kMagic) throw std::runtime_error("not a tensor file");
  if (in.get_le<std::uint32_t>() != kVersion) throw std::runtime_error("unsupported tensor file version");
  NamedTensors file;
  const auto meta_len = in.get_le<std::uint32_t>();
  file.metadata = nlohmann::json::parse(in.take(meta_len));
  const auto count = in.get_le<std::uint32_t>();
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = in.get_le<std::uint32_t>();
    std::string name(in.take(name_len));
    const auto rows = in.get_le<std::uint64_t>();
    const auto cols = in.get_le<std::uint64_t>();
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(in.get_le<std::uint64_t>());
    file.tensors.emplace_back(std::move(name), std::move(m));
  }
  return file;
}

void write_tensors(const std::filesystem::path& path, const NamedTensors& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::string bytes = encode_tensors(file);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

NamedTensors read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return decode_tensors(buffer.str());
}

}  // namespace metawaf
