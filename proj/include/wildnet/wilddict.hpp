#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wildnet/tensor.hpp"

namespace wildnet {

/// Bounded FIFO store of unit-norm wild embeddings. Logical index 0 is the
/// oldest surviving column. Single writer; queries must not overlap a push.
template <typename Scalar>
class ContentStore {
 public:
  using ColumnMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  ContentStore(Index channels, Index capacity) : ring_(ColumnMatrix::Zero(channels, capacity)) {
    if (channels < 1 || capacity < 1) {
      throw ParameterError("wilddict", "store channels and capacity must be positive");
    }
  }

  Index channels() const { return ring_.rows(); }
  Index capacity() const { return ring_.cols(); }
  Index size() const { return size_; }
  bool empty() const { return size_ == 0; }
  bool full() const { return size_ == capacity(); }
  /// Total number of columns ever pushed.
  std::uint64_t generation() const { return generation_; }

  /// Appends columns in order, evicting the oldest once full.
  void push(const Eigen::Ref<const ColumnMatrix>& columns) {
    if (columns.rows() != channels()) {
      throw ShapeError("wilddict", "pushed columns have " + std::to_string(columns.rows()) +
                                       " channels, store has " + std::to_string(channels()));
    }
    for (Index j = 0; j < columns.cols(); ++j) {
      const Index slot = physical(size_ < capacity() ? size_ : 0);
      ring_.col(slot) = columns.col(j);
      if (size_ < capacity()) {
        ++size_;
      } else {
        head_ = (head_ + 1) % capacity();
      }
      ++generation_;
    }
  }

  /// Pushes the pixels of a [C, H, W] grid (row-major pixel order).
  void push(const FeatureMap<Scalar>& grid) {
    if (grid.channels() != channels()) {
      throw ShapeError("wilddict", "pushed grid channel count does not match store");
    }
    push(ColumnMatrix(grid.values()));
  }

  auto entry(Index logical) const { return ring_.col(physical(logical)); }

  /// Contents in logical (oldest-first) order, [C, size].
  ColumnMatrix contents() const {
    ColumnMatrix out(channels(), size_);
    for (Index i = 0; i < size_; ++i) out.col(i) = entry(i);
    return out;
  }

  /// Logical index of the entry maximizing dot(query, entry); ties go to the
  /// oldest entry.
  Index nearest(const Eigen::Ref<const Vector<Scalar>>& query) const {
    check_query(query.rows());
    return best_logical(query.data());
  }

  /// `nearest` for every column of `queries` ([C, N]).
  std::vector<Index> nearest_batch(const Eigen::Ref<const ColumnMatrix>& queries) const {
    check_query(queries.rows());
    const ColumnMatrix q = queries;  // contiguous columns
    std::vector<Index> out(static_cast<std::size_t>(q.cols()));
    for (Index j = 0; j < q.cols(); ++j) out[static_cast<std::size_t>(j)] = best_logical(q.col(j).data());
    return out;
  }

  void clear() {
    size_ = 0;
    head_ = 0;
    generation_ = 0;
  }

  /// Rebuilds a store from logical-order contents (oldest first).
  static ContentStore from_contents(const ColumnMatrix& contents, Index capacity, std::uint64_t generation) {
    if (contents.cols() > capacity) {
      throw ShapeError("wilddict", "snapshot holds more entries than its capacity");
    }
    ContentStore store(contents.rows(), capacity);
    store.push(contents);
    store.generation_ = generation;
    return store;
  }

 private:
  Index physical(Index logical) const { return (head_ + logical) % capacity(); }

  void check_query(Index rows) const {
    if (size_ == 0) throw EmptyStoreError("wilddict", "nearest-neighbor query on an empty store");
    if (rows != channels()) throw ShapeError("wilddict", "query channel count does not match store");
  }

  // Sequential dot products: a GEMM's rounding depends on where a column sits
  // in memory, so equal entries could score differently and break the tie rule.
  Scalar entry_dot(Index logical, const Scalar* q) const {
    const Scalar* e = ring_.data() + physical(logical) * channels();
    Scalar s = 0;
    for (Index c = 0; c < channels(); ++c) s += e[c] * q[c];
    return s;
  }

  Index best_logical(const Scalar* q) const {
    Index best = 0;
    Scalar best_dot = entry_dot(0, q);
    for (Index i = 1; i < size_; ++i) {
      const Scalar d = entry_dot(i, q);
      if (d > best_dot) {
        best_dot = d;
        best = i;
      }
    }
    return best;
  }

  ColumnMatrix ring_;
  Index size_ = 0;
  Index head_ = 0;
  std::uint64_t generation_ = 0;
};

/// Snapshot layout: four little-endian uint64 (channels, size, capacity,
/// generation) followed by the [channels, size] entries as row-major float32.
void save_store_snapshot(const std::string& path, const ContentStore<float>& store);
ContentStore<float> load_store_snapshot(const std::string& path);

}  // namespace wildnet
