#include "dsai/decimal.hpp"

#include <cctype>

#include "dsai/error.hpp"

namespace dsai {

Decimal Decimal::parse(std::string_view text) {
  std::size_t i = 0;
  bool negative = false;
  if (i < text.size() && (text[i] == '-' || text[i] == '+')) {
    negative = text[i] == '-';
    ++i;
  }
  if (i >= text.size()) {
    throw Error(ErrorCode::ingest_parse, "empty decimal literal");
  }
  std::int64_t integral = 0;
  bool saw_digit = false;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
    integral = integral * 10 + (text[i] - '0');
    saw_digit = true;
    ++i;
  }
  std::int64_t fraction = 0;
  int fraction_digits = 0;
  if (i < text.size() && text[i] == '.') {
    ++i;
    while (i < text.size() &&
           std::isdigit(static_cast<unsigned char>(text[i]))) {
      if (fraction_digits >= kFractionDigits) {
        throw Error(ErrorCode::ingest_parse,
                    "decimal literal exceeds 12 fractional digits: " +
                        std::string(text));
      }
      fraction = fraction * 10 + (text[i] - '0');
      ++fraction_digits;
      saw_digit = true;
      ++i;
    }
  }
  if (!saw_digit || i != text.size()) {
    throw Error(ErrorCode::ingest_parse,
                "malformed decimal literal: " + std::string(text));
  }
  for (int d = fraction_digits; d < kFractionDigits; ++d) fraction *= 10;
  std::int64_t units = integral * kScale + fraction;
  return from_units(negative ? -units : units);
}

std::string Decimal::str() const {
  std::int64_t u = units_;
  std::string sign;
  if (u < 0) {
    sign = "-";
    u = -u;
  }
  std::int64_t integral = u / kScale;
  std::int64_t fraction = u % kScale;
  std::string out = sign + std::to_string(integral);
  if (fraction != 0) {
    std::string frac = std::to_string(fraction);
    frac.insert(frac.begin(), kFractionDigits - frac.size(), '0');
    while (!frac.empty() && frac.back() == '0') frac.pop_back();
    out += "." + frac;
  }
  return out;
}

}  // namespace dsai
