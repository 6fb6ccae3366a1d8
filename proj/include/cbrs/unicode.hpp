#pragma once

#include <string>
#include <string_view>
#include <vector>

// Thin UTF-8 helpers over ICU. Strings are UTF-8 everywhere in the engine;
// invalid sequences decode to U+FFFD.
namespace cbrs::unicode {

std::u32string decode(std::string_view utf8);
std::string encode(std::u32string_view cps);
std::string encode(char32_t cp);

std::string nfc(std::string_view utf8);
std::string casefold(std::string_view utf8);

bool is_space(char32_t cp);
bool is_alpha(char32_t cp);
bool is_digit(char32_t cp);
// Letters, combining marks, and numbers; marks matter for Bengali vowel signs.
bool is_word_char(char32_t cp);
bool is_punct(char32_t cp);
bool is_bengali(char32_t cp);
bool is_latin(char32_t cp);

// Maps Bengali digits (U+09E6..U+09EF) and other Nd digits to ASCII; -1 if
// not a decimal digit.
int digit_value(char32_t cp);

std::string trim(std::string_view s);
// Trims and collapses runs of Unicode whitespace to a single ASCII space.
std::string collapse_whitespace(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);

// ASCII digits in place of any decimal digits, everything else untouched.
std::string ascii_digits(std::string_view s);

}  // namespace cbrs::unicode
