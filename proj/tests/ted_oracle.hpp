#pragma once

#include <algorithm>
#include <deque>
#include <functional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "cbrs/tree.hpp"

// Exhaustive tree edit distance: breadth-first search over forests reachable
// by unit-cost relabel, delete (children spliced into the parent) and insert
// (new node adopting a contiguous run of siblings). Only usable on tiny trees.
namespace cbrs::testing {

using Forest = std::vector<LabeledTree>;

inline size_t forest_size(const Forest& f) {
  size_t n = 0;
  for (const auto& t : f) n += t.size();
  return n;
}

inline std::string forest_key(const Forest& f) {
  std::string key;
  for (const auto& t : f) key += to_bracket(t);
  return key;
}

inline void collect_labels(const LabeledTree& t, std::set<std::string>& out) {
  out.insert(t.label);
  for (const auto& c : t.children) collect_labels(c, out);
}

// Calls emit with every sibling list obtainable from `list` by one edit
// anywhere inside it.
inline void forest_neighbors(const Forest& list, const std::set<std::string>& labels, bool can_insert,
                             const std::function<void(Forest)>& emit) {
  for (size_t i = 0; i < list.size(); ++i) {
    for (const auto& l : labels) {
      if (l == list[i].label) continue;
      Forest f = list;
      f[i].label = l;
      emit(std::move(f));
    }
    Forest del(list.begin(), list.begin() + static_cast<long>(i));
    del.insert(del.end(), list[i].children.begin(), list[i].children.end());
    del.insert(del.end(), list.begin() + static_cast<long>(i) + 1, list.end());
    emit(std::move(del));
    forest_neighbors(list[i].children, labels, can_insert, [&](Forest children) {
      Forest f = list;
      f[i].children = std::move(children);
      emit(std::move(f));
    });
  }
  if (!can_insert) return;
  for (size_t i = 0; i <= list.size(); ++i) {
    for (size_t j = i; j <= list.size(); ++j) {
      for (const auto& l : labels) {
        LabeledTree node{l, Forest(list.begin() + static_cast<long>(i), list.begin() + static_cast<long>(j))};
        Forest f(list.begin(), list.begin() + static_cast<long>(i));
        f.push_back(std::move(node));
        f.insert(f.end(), list.begin() + static_cast<long>(j), list.end());
        emit(std::move(f));
      }
    }
  }
}

inline size_t brute_force_ted(const LabeledTree& a, const LabeledTree& b) {
  // Some optimal script deletes first, relabels next and inserts last, so
  // no intermediate forest needs more nodes than the larger input, and only
  // labels of the target are worth writing.
  const size_t bound = std::max(a.size(), b.size());
  std::set<std::string> labels;
  collect_labels(b, labels);
  const std::string goal = to_bracket(b);
  std::unordered_map<std::string, size_t> dist;
  std::deque<Forest> queue;
  dist[forest_key({a})] = 0;
  queue.push_back({a});
  while (!queue.empty()) {
    Forest cur = std::move(queue.front());
    queue.pop_front();
    const size_t d = dist[forest_key(cur)];
    if (forest_key(cur) == goal) return d;
    const bool can_insert = forest_size(cur) < bound;
    forest_neighbors(cur, labels, can_insert, [&](Forest next) {
      auto key = forest_key(next);
      if (dist.emplace(std::move(key), d + 1).second) queue.push_back(std::move(next));
    });
  }
  return SIZE_MAX;
}

}  // namespace cbrs::testing
