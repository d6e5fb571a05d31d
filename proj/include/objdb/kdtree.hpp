#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

namespace objdb {

// Exact nearest-neighbor tree over fixed-dimension points. Used both for 3D
// spatial queries and for descriptor-space matching. Results are fully
// deterministic: distance ties are broken by the lower point index.
template <int Dim>
class KdTree {
 public:
  using Point = Eigen::Matrix<double, Dim, 1>;

  KdTree() = default;

  explicit KdTree(std::vector<Point> points) : points_(std::move(points)) {
    if (points_.empty()) return;
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(points_.size());
    root_ = build(0, static_cast<int>(points_.size()));
  }

  std::size_t size() const { return points_.size(); }
  const Point& point(int index) const { return points_[static_cast<std::size_t>(index)]; }

  // Index of the nearest point, or -1 on an empty tree.
  int nearest(const Point& query) const {
    auto best = knn(query, 1);
    return best.empty() ? -1 : best.front().first;
  }

  // The k nearest points as (index, distance), closest first.
  std::vector<std::pair<int, double>> knn(const Point& query, int k) const {
    std::vector<std::pair<int, double>> heap;  // max-heap on (distance, index)
    if (root_ >= 0 && k > 0) knn_search(root_, query, k, heap);
    std::sort(heap.begin(), heap.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second < b.second : a.first < b.first;
    });
    return heap;
  }

  // All point indices within `radius` of the query, ascending index order.
  std::vector<int> radius_search(const Point& query, double radius) const {
    std::vector<int> found;
    if (root_ >= 0) radius_collect(root_, query, radius * radius, found);
    std::sort(found.begin(), found.end());
    return found;
  }

 private:
  struct Node {
    int point_index = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(int begin, int end) {
    if (begin >= end) return -1;
    // Split on the axis with the widest spread over this range.
    Point lo = points_[order_[begin]];
    Point hi = lo;
    for (int i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);

    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       const double pa = points_[a][axis];
                       const double pb = points_[b][axis];
                       return pa != pb ? pa < pb : a < b;
                     });

    Node node;
    node.point_index = order_[mid];
    node.axis = axis;
    const int node_index = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int left = build(begin, mid);
    const int right = build(mid + 1, end);
    nodes_[node_index].left = left;
    nodes_[node_index].right = right;
    return node_index;
  }

  void knn_search(int node_index, const Point& query, int k,
                  std::vector<std::pair<int, double>>& heap) const {
    const Node& node = nodes_[node_index];
    const Point& p = points_[node.point_index];
    const double dist = (p - query).norm();

    // Max-heap on (distance, index): the front is the current worst
    // candidate, i.e. the one evicted first on a tie.
    auto cmp = [](const std::pair<int, double>& a, const std::pair<int, double>& b) {
      return a.second != b.second ? a.second < b.second : a.first < b.first;
    };
    if (static_cast<int>(heap.size()) < k) {
      heap.emplace_back(node.point_index, dist);
      std::push_heap(heap.begin(), heap.end(), cmp);
    } else if (dist < heap.front().second ||
               (dist == heap.front().second && node.point_index < heap.front().first)) {
      std::pop_heap(heap.begin(), heap.end(), cmp);
      heap.back() = {node.point_index, dist};
      std::push_heap(heap.begin(), heap.end(), cmp);
    }

    const double delta = query[node.axis] - p[node.axis];
    const int near = delta < 0 ? node.left : node.right;
    const int far = delta < 0 ? node.right : node.left;
    if (near >= 0) knn_search(near, query, k, heap);
    if (far >= 0 &&
        (static_cast<int>(heap.size()) < k || std::abs(delta) <= heap.front().second)) {
      knn_search(far, query, k, heap);
    }
  }

  void radius_collect(int node_index, const Point& query, double radius_sq,
                      std::vector<int>& found) const {
    const Node& node = nodes_[node_index];
    const Point& p = points_[node.point_index];
    if ((p - query).squaredNorm() <= radius_sq) found.push_back(node.point_index);
    const double delta = query[node.axis] - p[node.axis];
    const int near = delta < 0 ? node.left : node.right;
    const int far = delta < 0 ? node.right : node.left;
    if (near >= 0) radius_collect(near, query, radius_sq, found);
    if (far >= 0 && delta * delta <= radius_sq) radius_collect(far, query, radius_sq, found);
  }

  std::vector<Point> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

using KdTree3 = KdTree<3>;

}  // namespace objdb
