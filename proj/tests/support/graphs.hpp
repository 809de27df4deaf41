// SPDX-License-Identifier: Apache-2.0
// Random heap graphs with an independently kept adjacency list, for
// checking the collector's marking against a plain BFS.
#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pjh/gc.hpp"
#include "pjh/heap.hpp"

namespace testgraphs {

struct Graph {
  std::vector<pjh::ObjRef> nodes;
  std::vector<std::vector<std::size_t>> edges;
  std::vector<std::size_t> roots;
};

inline const pjh::TypeDescriptor& node_array(pjh::Heap& heap) {
  return heap.register_type(pjh::TypeDescriptor::array_of("gnode", pjh::FieldKind::Reference));
}

/// Every node is a reference array of 0..max_degree edges to random nodes;
/// up to `max_roots` of them are bound as roots "g0", "g1", ...
inline Graph build_random_graph(pjh::Heap& heap, std::size_t n, std::mt19937_64& rng,
                                std::size_t max_degree = 3, std::size_t max_roots = 4) {
  const auto& t = node_array(heap);
  Graph g;
  g.nodes.reserve(n);
  g.edges.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    g.nodes.push_back(heap.allocate(t, rng() % (max_degree + 1)));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = heap.array_length(g.nodes[i]);
    for (std::uint64_t k = 0; k < len; ++k) {
      // Leave some slots null so that sparse graphs appear too.
      if (rng() % 4 == 0) continue;
      const std::size_t j = rng() % n;
      heap.set_element_ref(g.nodes[i], k, g.nodes[j]);
      g.edges[i].push_back(j);
    }
  }
  const std::size_t nroots = 1 + rng() % max_roots;
  for (std::size_t r = 0; r < nroots; ++r) {
    const std::size_t idx = rng() % n;
    g.roots.push_back(idx);
    heap.set_root("g" + std::to_string(r), g.nodes[idx]);
  }
  return g;
}

/// Heap offsets of the nodes reachable from the roots, by breadth-first search
/// over the recorded adjacency list.
inline std::set<std::uint64_t> bfs_reachable(const pjh::Heap& heap, const Graph& g) {
  std::vector<bool> seen(g.nodes.size(), false);
  std::deque<std::size_t> queue;
  for (auto r : g.roots) {
    if (!seen[r]) {
      seen[r] = true;
      queue.push_back(r);
    }
  }
  while (!queue.empty()) {
    const auto i = queue.front();
    queue.pop_front();
    for (auto j : g.edges[i]) {
      if (!seen[j]) {
        seen[j] = true;
        queue.push_back(j);
      }
    }
  }
  std::set<std::uint64_t> out;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (seen[i]) out.insert(heap.offset_of(g.nodes[i].address));
  }
  return out;
}

/// A random but well-formed liveness bitmap: non-overlapping objects of
/// 2..max_words words, each live with probability `density`.
inline pjh::MarkBitmap random_bitmap(std::mt19937_64& rng, std::uint64_t data_start,
                                     std::uint64_t words, double density = 0.5,
                                     std::uint64_t max_words = 64) {
  pjh::MarkBitmap bm(data_start, words);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uint64_t w = 0;
  while (w < words) {
    const std::uint64_t len = std::min<std::uint64_t>(2 + rng() % (max_words - 1), words - w);
    if (len >= 2 && coin(rng) < density) bm.mark(data_start + w * 8, len * 8);
    w += len;
  }
  return bm;
}

}  // namespace testgraphs
