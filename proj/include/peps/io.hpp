#pragma once

#include <iosfwd>
#include <string>

#include "peps/tensor.hpp"

namespace peps {

/// Tensor snapshot: "PEPSTNS1", u64 rank, u64 extents, then f64 data, all
/// little-endian.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void write_u64(std::ostream& os, std::uint64_t v);
std::uint64_t read_u64(std::istream& is);
void write_f64(std::ostream& os, double v);
double read_f64(std::istream& is);

/// Shortest text with 17 significant digits and a '.' decimal separator,
/// independent of the global locale.
std::string format_real(double v);

/// Raised on malformed or truncated binary input.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace peps
