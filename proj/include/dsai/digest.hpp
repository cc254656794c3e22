#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace dsai {

// SHA-256 hex digest (lowercase).
std::string sha256_hex(std::string_view data);

// Digest of a file's bytes. Throws Error(precondition) if unreadable.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace dsai
