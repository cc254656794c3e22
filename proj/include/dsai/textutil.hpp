#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dsai {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::string collapse_whitespace(std::string_view s);

// trim + casefold + collapse internal whitespace. Used wherever string
// identity matters (values, labels, verdict tokens).
std::string normalize(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);

bool icontains(std::string_view haystack, std::string_view needle);
bool starts_with_i(std::string_view s, std::string_view prefix);

// Lowercase id with runs of non-alphanumerics collapsed to '_'.
std::string slugify(std::string_view s);

}  // namespace dsai
