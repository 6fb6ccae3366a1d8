#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cbrs {

// Ordered labeled tree, the shape tree edit distance works on.
struct LabeledTree {
  std::string label;
  std::vector<LabeledTree> children;

  size_t size() const;
  friend bool operator==(const LabeledTree&, const LabeledTree&) = default;
};

// Bracket notation: "{a{b}{c{d}}}". Labels may not contain '{', '}' or '\'
// unescaped; the writer escapes them with '\'.
std::string to_bracket(const LabeledTree& tree);
LabeledTree parse_bracket(std::string_view text);

}  // namespace cbrs
