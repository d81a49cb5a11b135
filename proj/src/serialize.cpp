#include "glam/serialize.hpp"

#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "glam/error.hpp"

namespace glam {
namespace {

constexpr char kMagic[4] = {'G', 'T', 'S', 'R'};
constexpr std::size_t kMaxRank = 16;

template <typename T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  auto bits = std::bit_cast<U>(value);
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  os.write(bytes, sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw FormatError("truncated tensor blob");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

template <typename Stored, typename Scalar>
std::vector<Scalar> read_payload(std::istream& is, std::size_t count) {
  std::vector<Scalar> out(count);
  for (auto& v : out) v = static_cast<Scalar>(get_le<Stored>(is));
  return out;
}

}  // namespace

template <typename Scalar>
void write_tensor(std::ostream& os, const Tensor<Scalar>& tensor) {
  os.write(kMagic, 4);
  put_le(os, static_cast<std::uint8_t>(dtype_of<Scalar>()));
  put_le(os, static_cast<std::uint8_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) put_le(os, static_cast<std::uint64_t>(d));
  for (Scalar v : tensor.data()) put_le(os, v);
  if (!os) throw IOError("failed writing tensor blob");
}

template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string_view(magic, 4) != std::string_view(kMagic, 4)) {
    throw FormatError("missing GTSR magic");
  }
  const auto tag = get_le<std::uint8_t>(is);
  const auto rank = get_le<std::uint8_t>(is);
  if (rank > kMaxRank) throw FormatError("tensor rank " + std::to_string(rank) + " too large");
  Shape shape(rank);
  for (auto& d : shape) {
    d = static_cast<std::size_t>(get_le<std::uint64_t>(is));
    if (d == 0) throw FormatError("tensor blob has a zero dimension");
  }
  const std::size_t count = element_count(shape);
  switch (static_cast<DType>(tag)) {
    case DType::float32:
      return Tensor<Scalar>(shape, read_payload<float, Scalar>(is, count));
    case DType::float64:
      return Tensor<Scalar>(shape, read_payload<double, Scalar>(is, count));
  }
  throw FormatError("unknown tensor dtype tag " + std::to_string(tag));
}

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& tensor) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, tensor);
  write_file_atomic(path, os.str());
}

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOError("cannot open " + path.string());
  return read_tensor<Scalar>(is);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IOError("cannot write " + tmp.string());
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw IOError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IOError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace glam
