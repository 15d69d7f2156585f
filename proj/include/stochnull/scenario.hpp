#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>

#include <Eigen/Dense>

#include "stochnull/errors.hpp"
#include "stochnull/grid.hpp"

namespace stochnull {

/// Binary tree of Brownian histories. Level n has 2^n nodes stored contiguously
/// from offset 2^n - 1; node (n, k) branches to (n+1, 2k) with ΔW = +√Δt and
/// (n+1, 2k+1) with ΔW = -√Δt, each with probability 1/2.
///
/// The collapsed variant keeps a single node per level and no noise; it is the
/// deterministic limit used as a reference solver.
class ScenarioTree {
 public:
  static constexpr int kDefaultMaxSteps = 16;

  static ScenarioTree binary(int steps, double horizon, int max_steps = kDefaultMaxSteps) {
    validate(steps, horizon);
    if (steps > max_steps) {
      const double nodes = std::ldexp(1.0, steps + 1) - 1;
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "M = %d exceeds the node cap M <= %d: the tree would hold %.0f nodes, "
                    "%.3g MiB per field at N = 64",
                    steps, max_steps, nodes, nodes * 64 * 8 / 1048576.0);
      throw ValidationError(buf);
    }
    return ScenarioTree(steps, horizon, false);
  }

  static ScenarioTree collapsed(int steps, double horizon) {
    validate(steps, horizon);
    return ScenarioTree(steps, horizon, true);
  }

  int steps() const { return steps_; }
  double horizon() const { return horizon_; }
  double dt() const { return dt_; }
  double sqrt_dt() const { return sqrt_dt_; }
  bool collapsed() const { return collapsed_; }

  int nodes_at(int level) const { return collapsed_ ? 1 : 1 << level; }
  int offset(int level) const { return collapsed_ ? level : (1 << level) - 1; }
  int node_count() const { return offset(steps_) + nodes_at(steps_); }
  int index(int level, int k) const { return offset(level) + k; }
  int leaf_count() const { return nodes_at(steps_); }

  /// Children of (level, k): first the +√Δt branch, then the -√Δt branch.
  int child_plus(int level, int k) const { return index(level + 1, collapsed_ ? 0 : 2 * k); }
  int child_minus(int level, int k) const { return index(level + 1, collapsed_ ? 0 : 2 * k + 1); }

  double weight(int level) const { return collapsed_ ? 1.0 : std::ldexp(1.0, -level); }
  double time(int level) const { return level * dt_; }

  /// W(t_n) along the path to (level, k).
  double brownian(int level, int k) const {
    if (collapsed_) return 0.0;
    const int minus = __builtin_popcount(static_cast<unsigned>(k));
    return sqrt_dt_ * (level - 2 * minus);
  }

 private:
  ScenarioTree(int steps, double horizon, bool collapsed)
      : steps_(steps), horizon_(horizon), dt_(horizon / steps), sqrt_dt_(std::sqrt(horizon / steps)),
        collapsed_(collapsed) {}

  static void validate(int steps, double horizon) {
    internal::require(steps >= 2, "M = " + std::to_string(steps) + " is below the minimum of 2");
    internal::require(horizon > 0 && std::isfinite(horizon), "horizon T must be positive");
  }

  int steps_;
  double horizon_;
  double dt_;
  double sqrt_dt_;
  bool collapsed_;
};

/// One spatial vector per tree node: column tree.index(n, k).
struct AdaptedField {
  AdaptedField() = default;
  AdaptedField(const ScenarioTree& tree, int n_space)
      : values(Eigen::MatrixXd::Zero(n_space, tree.node_count())) {}

  Eigen::MatrixXd values;

  bool empty() const { return values.size() == 0; }
  auto col(int idx) { return values.col(idx); }
  auto col(int idx) const { return values.col(idx); }

  /// Columns of one level, in node order.
  auto level(const ScenarioTree& tree, int n) const {
    return values.middleCols(tree.offset(n), tree.nodes_at(n));
  }
  auto level(const ScenarioTree& tree, int n) { return values.middleCols(tree.offset(n), tree.nodes_at(n)); }
};

namespace internal {

// Pairwise tower reduction of the columns of a level block: repeated averaging of
// sibling pairs, so level-0 means equal means of conditional means exactly.
template <typename Derived>
Eigen::VectorXd tower_mean(const Eigen::MatrixBase<Derived>& block) {
  Eigen::MatrixXd work = block;
  int width = static_cast<int>(work.cols());
  while (width > 1) {
    const int half = width / 2;
    for (int j = 0; j < half; ++j) work.col(j) = 0.5 * (work.col(2 * j) + work.col(2 * j + 1));
    width = half;
  }
  return work.col(0);
}

}  // namespace internal

/// E[field at level n]
inline Eigen::VectorXd expectation(const ScenarioTree& tree, const AdaptedField& field, int level) {
  if (level < 0 || level > tree.steps()) throw ValidationError("level out of range");
  if (field.values.cols() != tree.node_count()) throw ValidationError("field does not match tree");
  return internal::tower_mean(field.level(tree, level));
}

/// E over leaf-indexed data (one column per leaf).
inline Eigen::VectorXd leaf_expectation(const ScenarioTree& tree, const Eigen::MatrixXd& leaves) {
  if (leaves.cols() != tree.leaf_count()) throw ValidationError("leaf data does not match tree");
  return internal::tower_mean(leaves);
}

/// E⟨A, B⟩ for leaf-indexed data, with the h-weighted spatial product.
inline double leaf_inner(const ScenarioTree& tree, const SpatialGrid& grid, const Eigen::MatrixXd& a,
                         const Eigen::MatrixXd& b) {
  if (a.rows() != grid.N || b.rows() != grid.N || a.cols() != b.cols())
    throw ValidationError("leaf data shape mismatch");
  Eigen::RowVectorXd per_leaf(a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) per_leaf[j] = grid.inner(a.col(j), b.col(j));
  (void)tree;
  return internal::tower_mean(per_leaf)[0];
}

enum class Region { kWhole, kG0 };

/// Σ_{n<M} Δt·E_n[h Σ_j mask_j f_j g_j]; left-endpoint rule in time.
inline double qt_inner(const ScenarioTree& tree, const SpatialGrid& grid, const AdaptedField& f,
                       const AdaptedField& g, Region region = Region::kWhole) {
  if (f.values.rows() != grid.N || g.values.rows() != grid.N ||
      f.values.cols() != tree.node_count() || g.values.cols() != tree.node_count())
    throw ValidationError("field shape mismatch in qt integral");
  double total = 0.0;
  for (int n = 0; n < tree.steps(); ++n) {
    const int count = tree.nodes_at(n);
    Eigen::RowVectorXd per_node(count);
    for (int k = 0; k < count; ++k) {
      const int idx = tree.index(n, k);
      if (region == Region::kG0)
        per_node[k] = grid.h * (grid.chi0.array() * f.values.col(idx).array() *
                                g.values.col(idx).array()).sum();
      else
        per_node[k] = grid.inner(f.values.col(idx), g.values.col(idx));
    }
    total += tree.dt() * internal::tower_mean(per_node)[0];
  }
  return total;
}

/// E∫∫ f² over the region.
inline double qt_integral_squared(const ScenarioTree& tree, const SpatialGrid& grid,
                                  const AdaptedField& f, Region region = Region::kWhole) {
  return qt_inner(tree, grid, f, f, region);
}

/// E∫∫ f over the region.
inline double qt_integral(const ScenarioTree& tree, const SpatialGrid& grid, const AdaptedField& f,
                          Region region = Region::kWhole) {
  AdaptedField ones;
  ones.values = Eigen::MatrixXd::Ones(f.values.rows(), f.values.cols());
  return qt_inner(tree, grid, f, ones, region);
}

struct MartingaleSplit {
  Eigen::VectorXd mean;
  Eigen::VectorXd z;
};

/// Conditional mean and martingale increment coefficient from the two children.
inline MartingaleSplit martingale_part(const ScenarioTree& tree,
                                       const Eigen::Ref<const Eigen::VectorXd>& plus,
                                       const Eigen::Ref<const Eigen::VectorXd>& minus) {
  if (plus.size() != minus.size()) throw ValidationError("children differ in size");
  return {0.5 * (plus + minus), (plus - minus) / (2.0 * tree.sqrt_dt())};
}

/// Z at every node of `level`, from the field's values at level + 1.
inline AdaptedField martingale_field(const ScenarioTree& tree, const AdaptedField& field, int level) {
  if (level < 0 || level >= tree.steps())
    throw ValidationError("martingale part is undefined at level " + std::to_string(level));
  AdaptedField z(tree, static_cast<int>(field.values.rows()));
  for (int k = 0; k < tree.nodes_at(level); ++k) {
    if (tree.collapsed()) continue;
    z.col(tree.index(level, k)) =
        martingale_part(tree, field.col(tree.child_plus(level, k)), field.col(tree.child_minus(level, k))).z;
  }
  return z;
}

}  // namespace stochnull
