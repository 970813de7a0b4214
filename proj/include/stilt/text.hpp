#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace stilt::text {

bool is_space(char c);

/// Whitespace tokens (ASCII whitespace is the separator).
std::vector<std::string> tokens(std::string_view s);
std::size_t count_tokens(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Tokens rejoined by single spaces.
std::string normalize_whitespace(std::string_view s);

/// ASCII lowercase plus collapsed whitespace; the equality key for options.
std::string normalize_option(std::string_view s);

std::string ascii_lower(std::string_view s);

/// Splits UTF-8 into code points (each returned as its byte sequence).
/// Invalid bytes are passed through one at a time.
std::vector<std::string_view> utf8_chars(std::string_view s);

bool is_valid_utf8(std::string_view s);

}  // namespace stilt::text
