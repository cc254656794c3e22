#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace dsai {

// Fixed-point decimal with 12 fractional digits. Costs are sums of
// (integer count x decimal price), so addition and integer multiplication
// are the only operations needed and both are exact.
class Decimal {
 public:
  static constexpr int kFractionDigits = 12;
  static constexpr std::int64_t kScale = 1'000'000'000'000LL;

  Decimal() = default;

  // Parses "2.43746", "-0.0304", "400". Throws Error(ingest_parse) on
  // malformed input or more than 12 fractional digits.
  static Decimal parse(std::string_view text);

  static Decimal from_units(std::int64_t units) {
    Decimal d;
    d.units_ = units;
    return d;
  }

  std::int64_t units() const { return units_; }

  Decimal operator+(Decimal other) const {
    return from_units(units_ + other.units_);
  }
  Decimal operator-(Decimal other) const {
    return from_units(units_ - other.units_);
  }
  Decimal& operator+=(Decimal other) {
    units_ += other.units_;
    return *this;
  }
  Decimal operator*(std::int64_t count) const {
    return from_units(units_ * count);
  }

  bool operator==(const Decimal&) const = default;
  auto operator<=>(const Decimal&) const = default;

  // Canonical form: no trailing fractional zeros, "0" for zero.
  std::string str() const;

 private:
  std::int64_t units_ = 0;
};

}  // namespace dsai
