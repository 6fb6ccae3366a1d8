#include "cbrs/unicode.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <stdexcept>

namespace cbrs::unicode {

std::u32string decode(std::string_view utf8) {
  std::u32string out;
  out.reserve(utf8.size());
  const auto* s = reinterpret_cast<const uint8_t*>(utf8.data());
  const auto length = static_cast<int32_t>(utf8.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(s, i, length, c);
    out.push_back(c < 0 ? U'�' : static_cast<char32_t>(c));
  }
  return out;
}

std::string encode(char32_t cp) {
  char buf[4];
  int32_t n = 0;
  UBool error = false;
  U8_APPEND(reinterpret_cast<uint8_t*>(buf), n, 4, static_cast<UChar32>(cp), error);
  if (error) return "\xEF\xBF\xBD";
  return std::string(buf, static_cast<size_t>(n));
}

std::string encode(std::u32string_view cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t cp : cps) out += encode(cp);
  return out;
}

std::string nfc(std::string_view utf8) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");
  auto src = icu::UnicodeString::fromUTF8(icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  icu::UnicodeString dst = norm->normalize(src, status);
  if (U_FAILURE(status)) return std::string(utf8);
  std::string out;
  dst.toUTF8String(out);
  return out;
}

std::string casefold(std::string_view utf8) {
  auto s = icu::UnicodeString::fromUTF8(icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  s.foldCase();
  std::string out;
  s.toUTF8String(out);
  return out;
}

bool is_space(char32_t cp) { return u_isUWhiteSpace(static_cast<UChar32>(cp)); }
bool is_alpha(char32_t cp) { return u_isUAlphabetic(static_cast<UChar32>(cp)); }
bool is_digit(char32_t cp) { return u_isdigit(static_cast<UChar32>(cp)); }

bool is_word_char(char32_t cp) {
  const auto mask = U_GET_GC_MASK(static_cast<UChar32>(cp));
  return (mask & (U_GC_L_MASK | U_GC_M_MASK | U_GC_N_MASK)) != 0;
}

bool is_punct(char32_t cp) {
  const auto mask = U_GET_GC_MASK(static_cast<UChar32>(cp));
  return (mask & (U_GC_P_MASK | U_GC_S_MASK)) != 0;
}

bool is_bengali(char32_t cp) { return cp >= 0x0980 && cp <= 0x09FF; }

bool is_latin(char32_t cp) {
  return ublock_getCode(static_cast<UChar32>(cp)) == UBLOCK_BASIC_LATIN ||
         ublock_getCode(static_cast<UChar32>(cp)) == UBLOCK_LATIN_1_SUPPLEMENT ||
         ublock_getCode(static_cast<UChar32>(cp)) == UBLOCK_LATIN_EXTENDED_A ||
         ublock_getCode(static_cast<UChar32>(cp)) == UBLOCK_LATIN_EXTENDED_B;
}

int digit_value(char32_t cp) { return u_charDigitValue(static_cast<UChar32>(cp)); }

std::string trim(std::string_view s) {
  const auto cps = decode(s);
  size_t b = 0, e = cps.size();
  while (b < e && is_space(cps[b])) ++b;
  while (e > b && is_space(cps[e - 1])) --e;
  return encode(std::u32string_view(cps).substr(b, e - b));
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char32_t cp : decode(s)) {
    if (is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out += encode(cp);
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::u32string cur;
  for (char32_t cp : decode(s)) {
    if (is_space(cp)) {
      if (!cur.empty()) out.push_back(encode(cur));
      cur.clear();
    } else {
      cur.push_back(cp);
    }
  }
  if (!cur.empty()) out.push_back(encode(cur));
  return out;
}

std::string ascii_digits(std::string_view s) {
  std::string out;
  for (char32_t cp : decode(s)) {
    const int d = digit_value(cp);
    if (d >= 0 && d <= 9 && cp > 0x7F)
      out.push_back(static_cast<char>('0' + d));
    else
      out += encode(cp);
  }
  return out;
}

}  // namespace cbrs::unicode
