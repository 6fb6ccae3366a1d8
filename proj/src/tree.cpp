#include "cbrs/tree.hpp"

#include "cbrs/error.hpp"

namespace cbrs {

size_t LabeledTree::size() const {
  size_t n = 1;
  for (const auto& c : children) n += c.size();
  return n;
}

namespace {

void write(const LabeledTree& t, std::string& out) {
  out.push_back('{');
  for (char c : t.label) {
    if (c == '{' || c == '}' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  for (const auto& c : t.children) write(c, out);
  out.push_back('}');
}

LabeledTree read(std::string_view text, size_t& pos) {
  if (pos >= text.size() || text[pos] != '{') throw Error("bracket tree: expected '{'");
  ++pos;
  LabeledTree t;
  while (pos < text.size() && text[pos] != '{' && text[pos] != '}') {
    if (text[pos] == '\\' && pos + 1 < text.size()) ++pos;
    t.label.push_back(text[pos++]);
  }
  while (pos < text.size() && text[pos] == '{') t.children.push_back(read(text, pos));
  if (pos >= text.size() || text[pos] != '}') throw Error("bracket tree: expected '}'");
  ++pos;
  return t;
}

}  // namespace

std::string to_bracket(const LabeledTree& tree) {
  std::string out;
  write(tree, out);
  return out;
}

LabeledTree parse_bracket(std::string_view text) {
  size_t pos = 0;
  auto t = read(text, pos);
  if (pos != text.size()) throw Error("bracket tree: trailing characters");
  return t;
}

}  // namespace cbrs
