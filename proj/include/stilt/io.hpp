#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace stilt::io {

std::string read_file(const std::filesystem::path& path);

/// Write-temp-then-rename so concurrent readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace stilt::io
