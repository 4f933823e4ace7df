#include "peps/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <iomanip>
#include <istream>
#include <locale>
#include <sstream>
#include <ostream>

namespace peps {

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'E', 'P', 'S', 'T', 'N', 'S', '1'};
constexpr std::uint64_t kMaxRank = 64;

void put_le(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> buf{};
  for (int i = 0; i < 8; ++i) buf[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf.data(), 8);
}

std::uint64_t get_le(std::istream& is) {
  std::array<unsigned char, 8> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), 8);
  if (is.gcount() != 8) throw FormatError("unexpected end of stream");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

void write_u64(std::ostream& os, std::uint64_t v) { put_le(os, v); }
std::uint64_t read_u64(std::istream& is) { return get_le(is); }
void write_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }
double read_f64(std::istream& is) { return std::bit_cast<double>(get_le(is)); }

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic.data(), kMagic.size());
  put_le(os, t.rank());
  for (auto e : t.shape()) put_le(os, e);
  for (double x : t.values()) write_f64(os, x);
  if (!os) throw FormatError("failed writing tensor snapshot");
}

Tensor read_tensor(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (is.gcount() != 8 || magic != kMagic) throw FormatError("bad tensor snapshot magic");
  const auto rank = get_le(is);
  if (rank > kMaxRank) throw FormatError("implausible tensor rank");
  Shape shape(rank);
  for (auto& e : shape) {
    e = get_le(is);
    if (e == 0) throw FormatError("zero extent in tensor snapshot");
  }
  std::vector<double> data(shape_size(shape));
  for (auto& x : data) x = read_f64(is);
  return Tensor(std::move(shape), std::move(data));
}

std::string format_real(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace peps
