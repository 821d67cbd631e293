#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace cap::unicode {

struct CodepointRange {
  char32_t first;
  char32_t last;
};

bool is_letter(char32_t cp);  // \p{L}
bool is_number(char32_t cp);  // \p{N}
bool is_space(char32_t cp);   // \s

struct Decoded {
  char32_t cp;
  std::size_t length;  // bytes consumed, >= 1
  bool valid;
};

/// Decodes one code point at byte offset pos. Malformed sequences consume a
/// single byte and decode as U+FFFD with valid == false.
Decoded decode(std::string_view text, std::size_t pos);

void append_utf8(std::string& out, char32_t cp);
bool is_valid_utf8(std::string_view text);

/// Byte offset of the code point with the given index; the text length when
/// index equals the number of code points. Throws InputError past the end.
std::size_t byte_offset_of(std::string_view text, std::size_t codepoint_index);
std::size_t codepoint_count(std::string_view text);

}  // namespace cap::unicode
