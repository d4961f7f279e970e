#ifndef ACELAB_BART_HPP
#define ACELAB_BART_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "acelab/rng.hpp"
#include "acelab/stats.hpp"

namespace acelab {

struct BartOptions {
  int n_trees = 200;
  int n_burn = 500;
  int n_kept = 500;
  int thin = 1;
  double alpha = 0.95;  // split probability alpha (1+depth)^-beta
  double beta = 2.0;
  double k = 2.0;  // leaf prior: sd = 0.5 / (k sqrt(n_trees))
  double sigma_nu = 3.0;
  double sigma_quantile = 0.90;
  int max_cutpoints = 100;
};

/// Bayesian additive regression trees, fit by the usual backfitting MCMC
/// with grow/prune/change proposals and conjugate leaf and variance draws.
/// Kept post-burn-in states support posterior-predictive evaluation.
class BartModel {
 public:
  struct EvalNode {
    std::int32_t var = -1;  // -1 for leaf
    std::int32_t left = -1;
    std::int32_t right = -1;
    double cut = 0.0;
    double leaf = 0.0;
  };

  BartModel(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const BartOptions& options,
            std::uint64_t seed)
      : options_(options), n_(X.rows()), p_(X.cols()) {
    if (n_ != y.size()) throw std::invalid_argument("bart: X rows != y length");
    if (n_ < 2) throw std::invalid_argument("bart: need at least 2 observations");
    if (options.n_trees < 1 || options.n_kept < 1 || options.thin < 1)
      throw std::invalid_argument("bart: invalid chain options");
    run_chain(X, y, seed);
  }

  int n_draws() const { return static_cast<int>(kept_sigma_.size()); }
  double sigma(int draw) const { return kept_sigma_[static_cast<std::size_t>(draw)]; }

  /// Sum-of-trees fit for one posterior draw, on the original response scale.
  double eval(int draw, const Eigen::VectorXd& x) const {
    const auto& trees = kept_trees_[static_cast<std::size_t>(draw)];
    double total = 0.0;
    for (const auto& tree : trees) {
      int node = 0;
      while (tree[static_cast<std::size_t>(node)].var >= 0) {
        const auto& nd = tree[static_cast<std::size_t>(node)];
        node = x[nd.var] <= nd.cut ? nd.left : nd.right;
      }
      total += tree[static_cast<std::size_t>(node)].leaf;
    }
    return y_mid_ + y_range_ * total;
  }

  /// Posterior mean prediction (average over all kept draws).
  double predict_mean(const Eigen::VectorXd& x) const {
    double total = 0.0;
    for (int d = 0; d < n_draws(); ++d) total += eval(d, x);
    return total / static_cast<double>(n_draws());
  }

 private:
  // Chain-side node. Children of -1 mark a leaf.
  struct ChainNode {
    int parent = -1;
    int left = -1;
    int right = -1;
    int var = -1;
    int cut = -1;
    int depth = 0;
    double leaf = 0.0;
    bool is_leaf() const { return left < 0; }
  };

  struct Tree {
    std::vector<ChainNode> nodes;
    std::vector<int> free_slots;

    int allocate() {
      if (!free_slots.empty()) {
        const int idx = free_slots.back();
        free_slots.pop_back();
        nodes[static_cast<std::size_t>(idx)] = ChainNode{};
        return idx;
      }
      nodes.push_back(ChainNode{});
      return static_cast<int>(nodes.size()) - 1;
    }
    void release(int idx) { free_slots.push_back(idx); }
    ChainNode& at(int idx) { return nodes[static_cast<std::size_t>(idx)]; }
    const ChainNode& at(int idx) const { return nodes[static_cast<std::size_t>(idx)]; }
  };

  void run_chain(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::uint64_t seed) {
    Rng rng(seed);

    // Response standardized to [-0.5, 0.5].
    const double y_min = y.minCoeff(), y_max = y.maxCoeff();
    y_mid_ = 0.5 * (y_min + y_max);
    y_range_ = y_max - y_min;
    if (y_range_ <= 0.0) y_range_ = 1.0;
    Eigen::VectorXd ys = (y.array() - y_mid_) / y_range_;

    build_cutpoints(X);

    // sigma prior scale from a ridge-stabilized linear fit on the
    // standardized response.
    double sigma_hat2;
    {
      Eigen::MatrixXd Xd(n_, p_ + 1);
      Xd.col(0).setOnes();
      Xd.rightCols(p_) = X;
      Eigen::MatrixXd A = Xd.transpose() * Xd;
      A.diagonal().array() += 1e-8 * static_cast<double>(n_);
      const Eigen::VectorXd beta = A.ldlt().solve(Xd.transpose() * ys);
      const double ssr = (ys - Xd * beta).squaredNorm();
      const Eigen::Index dof = std::max<Eigen::Index>(n_ - p_ - 1, 1);
      sigma_hat2 = std::max(ssr / static_cast<double>(dof), 1e-12);
    }
    const double nu = options_.sigma_nu;
    const double lambda = sigma_hat2 * chi_squared_quantile(1.0 - options_.sigma_quantile, nu) / nu;

    const int m = options_.n_trees;
    sigma_mu_ = 0.5 / (options_.k * std::sqrt(static_cast<double>(m)));
    double sigma2 = sigma_hat2;

    std::vector<Tree> trees(static_cast<std::size_t>(m));
    std::vector<std::vector<int>> leaf_of(static_cast<std::size_t>(m));
    std::vector<Eigen::VectorXd> tree_fit(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      trees[static_cast<std::size_t>(j)].allocate();
      leaf_of[static_cast<std::size_t>(j)].assign(static_cast<std::size_t>(n_), 0);
      tree_fit[static_cast<std::size_t>(j)] = Eigen::VectorXd::Zero(n_);
    }
    Eigen::VectorXd residual = ys;

    const int total_iters = options_.n_burn + options_.n_kept * options_.thin;
    kept_trees_.reserve(static_cast<std::size_t>(options_.n_kept));
    kept_sigma_.reserve(static_cast<std::size_t>(options_.n_kept));

    std::vector<double> leaf_sum;
    std::vector<int> leaf_count;

    for (int iter = 0; iter < total_iters; ++iter) {
      for (int j = 0; j < m; ++j) {
        auto& tree = trees[static_cast<std::size_t>(j)];
        auto& assign = leaf_of[static_cast<std::size_t>(j)];
        auto& fit = tree_fit[static_cast<std::size_t>(j)];

        propose_move(X, tree, assign, fit, residual, sigma2, rng);

        // Conjugate redraw of every leaf value, then refresh fits/residual.
        leaf_sum.assign(tree.nodes.size(), 0.0);
        leaf_count.assign(tree.nodes.size(), 0);
        for (Eigen::Index i = 0; i < n_; ++i) {
          const int leaf = assign[static_cast<std::size_t>(i)];
          leaf_sum[static_cast<std::size_t>(leaf)] += residual[i] + fit[i];
          leaf_count[static_cast<std::size_t>(leaf)] += 1;
        }
        for (std::size_t node = 0; node < tree.nodes.size(); ++node) {
          auto& nd = tree.nodes[node];
          if (!nd.is_leaf()) continue;
          const double denom = sigma2 + static_cast<double>(leaf_count[node]) * sigma_mu_ * sigma_mu_;
          const double post_mean = sigma_mu_ * sigma_mu_ * leaf_sum[node] / denom;
          const double post_sd = std::sqrt(sigma2 * sigma_mu_ * sigma_mu_ / denom);
          nd.leaf = rng.normal(post_mean, post_sd);
        }
        for (Eigen::Index i = 0; i < n_; ++i) {
          const double new_fit = tree.at(assign[static_cast<std::size_t>(i)]).leaf;
          residual[i] += fit[i] - new_fit;
          fit[i] = new_fit;
        }
      }

      const double ssr = residual.squaredNorm();
      sigma2 = rng.inv_gamma(0.5 * (nu + static_cast<double>(n_)), 0.5 * (nu * lambda + ssr));
      if (!std::isfinite(sigma2) || sigma2 <= 0.0)
        throw std::runtime_error("bart: MCMC produced non-finite variance");

      const int post = iter - options_.n_burn;
      if (post >= 0 && post % options_.thin == 0) {
        kept_sigma_.push_back(std::sqrt(sigma2) * y_range_);
        kept_trees_.push_back(flatten(trees));
      }
    }
  }

  void build_cutpoints(const Eigen::MatrixXd& X) {
    cutpoints_.resize(static_cast<std::size_t>(p_));
    std::vector<double> values(static_cast<std::size_t>(n_));
    for (Eigen::Index v = 0; v < p_; ++v) {
      for (Eigen::Index i = 0; i < n_; ++i) values[static_cast<std::size_t>(i)] = X(i, v);
      std::sort(values.begin(), values.end());
      values.erase(std::unique(values.begin(), values.end()), values.end());
      auto& cuts = cutpoints_[static_cast<std::size_t>(v)];
      cuts.clear();
      if (values.size() < 2) continue;
      if (static_cast<int>(values.size()) - 1 <= options_.max_cutpoints) {
        for (std::size_t i = 0; i + 1 < values.size(); ++i)
          cuts.push_back(0.5 * (values[i] + values[i + 1]));
      } else {
        const double lo = values.front(), hi = values.back();
        const int nc = options_.max_cutpoints;
        for (int i = 1; i <= nc; ++i)
          cuts.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(nc + 1));
      }
    }
  }

  double split_prob(int depth) const {
    return options_.alpha * std::pow(1.0 + static_cast<double>(depth), -options_.beta);
  }

  // Marginal likelihood of one leaf's data with the mean integrated out.
  double leaf_marginal(double count, double sum, double sigma2) const {
    if (count == 0.0) return 0.0;
    const double v = sigma2 + count * sigma_mu_ * sigma_mu_;
    return 0.5 * std::log(sigma2 / v) + sigma_mu_ * sigma_mu_ * sum * sum / (2.0 * sigma2 * v);
  }

  // Cut-index window for `var` at `node`, restricted by ancestor splits.
  std::pair<int, int> cut_window(const Tree& tree, int node, int var) const {
    int lo = 0;
    int hi = static_cast<int>(cutpoints_[static_cast<std::size_t>(var)].size()) - 1;
    int child = node;
    int parent = tree.at(node).parent;
    while (parent >= 0) {
      const auto& pn = tree.at(parent);
      if (pn.var == var) {
        if (pn.left == child) hi = std::min(hi, pn.cut - 1);
        else lo = std::max(lo, pn.cut + 1);
      }
      child = parent;
      parent = pn.parent;
    }
    return {lo, hi};
  }

  struct RulePick {
    int var = -1;
    int cut = -1;
    int n_available_vars = 0;
    int window = 0;
  };

  RulePick pick_rule(const Tree& tree, int node, Rng& rng) const {
    std::vector<std::pair<int, std::pair<int, int>>> avail;
    for (int v = 0; v < static_cast<int>(p_); ++v) {
      const auto w = cut_window(tree, node, v);
      if (w.second >= w.first) avail.push_back({v, w});
    }
    RulePick pick;
    if (avail.empty()) return pick;
    pick.n_available_vars = static_cast<int>(avail.size());
    const auto& chosen = avail[rng.uniform_below(avail.size())];
    pick.var = chosen.first;
    pick.window = chosen.second.second - chosen.second.first + 1;
    pick.cut = chosen.second.first + static_cast<int>(rng.uniform_below(
                                          static_cast<std::uint64_t>(pick.window)));
    return pick;
  }

  // Counts of the reverse-grow choices at an existing split node.
  RulePick describe_rule(const Tree& tree, int node) const {
    RulePick pick;
    pick.var = tree.at(node).var;
    pick.cut = tree.at(node).cut;
    for (int v = 0; v < static_cast<int>(p_); ++v) {
      const auto w = cut_window(tree, node, v);
      if (w.second >= w.first) {
        ++pick.n_available_vars;
        if (v == pick.var) pick.window = w.second - w.first + 1;
      }
    }
    return pick;
  }

  void collect(const Tree& tree, std::vector<int>& leaves, std::vector<int>& nogs) const {
    leaves.clear();
    nogs.clear();
    for (std::size_t idx = 0; idx < tree.nodes.size(); ++idx) {
      if (is_free(tree, static_cast<int>(idx))) continue;
      const auto& nd = tree.nodes[idx];
      if (nd.is_leaf()) leaves.push_back(static_cast<int>(idx));
      else if (tree.at(nd.left).is_leaf() && tree.at(nd.right).is_leaf())
        nogs.push_back(static_cast<int>(idx));
    }
  }

  bool is_free(const Tree& tree, int idx) const {
    for (int f : tree.free_slots)
      if (f == idx) return true;
    return false;
  }

  void propose_move(const Eigen::MatrixXd& X, Tree& tree, std::vector<int>& assign,
                    const Eigen::VectorXd& fit, const Eigen::VectorXd& residual, double sigma2,
                    Rng& rng) {
    std::vector<int> leaves, nogs;
    collect(tree, leaves, nogs);
    const bool single = tree.at(0).is_leaf();
    const double p_grow = single ? 1.0 : 0.28;
    const double p_prune = single ? 0.0 : 0.28;

    const double u = rng.uniform01();
    if (u < p_grow) {
      grow_move(X, tree, assign, fit, residual, sigma2, leaves, nogs, p_grow, rng);
    } else if (u < p_grow + p_prune) {
      prune_move(X, tree, assign, fit, residual, sigma2, leaves, nogs, rng);
    } else {
      change_move(X, tree, assign, fit, residual, sigma2, nogs, rng);
    }
  }

  void grow_move(const Eigen::MatrixXd& X, Tree& tree, std::vector<int>& assign,
                 const Eigen::VectorXd& fit, const Eigen::VectorXd& residual, double sigma2,
                 const std::vector<int>& leaves, const std::vector<int>& nogs, double p_grow_now,
                 Rng& rng) {
    const int target = leaves[rng.uniform_below(leaves.size())];
    const RulePick pick = pick_rule(tree, target, rng);
    if (pick.var < 0) return;
    const double cut_value = cutpoints_[static_cast<std::size_t>(pick.var)]
                                       [static_cast<std::size_t>(pick.cut)];

    double nl = 0.0, nr = 0.0, sl = 0.0, sr = 0.0;
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (assign[static_cast<std::size_t>(i)] != target) continue;
      const double rj = residual[i] + fit[i];
      if (X(i, pick.var) <= cut_value) {
        nl += 1.0;
        sl += rj;
      } else {
        nr += 1.0;
        sr += rj;
      }
    }

    const double log_like = leaf_marginal(nl, sl, sigma2) + leaf_marginal(nr, sr, sigma2) -
                            leaf_marginal(nl + nr, sl + sr, sigma2);
    const int depth = tree.at(target).depth;
    const double ps = split_prob(depth), ps_child = split_prob(depth + 1);
    const double log_prior = std::log(ps) + 2.0 * std::log(1.0 - ps_child) - std::log(1.0 - ps);

    const int parent = tree.at(target).parent;
    bool parent_was_nog = false;
    if (parent >= 0) {
      const auto& pn = tree.at(parent);
      parent_was_nog = tree.at(pn.left).is_leaf() && tree.at(pn.right).is_leaf();
    }
    const int n_nog_after = static_cast<int>(nogs.size()) + 1 - (parent_was_nog ? 1 : 0);

    const double log_forward = std::log(p_grow_now) - std::log(static_cast<double>(leaves.size())) -
                               std::log(static_cast<double>(pick.n_available_vars)) -
                               std::log(static_cast<double>(pick.window));
    const double log_backward = std::log(0.28) - std::log(static_cast<double>(n_nog_after));

    if (std::log(rng.uniform01()) >= log_like + log_prior + log_backward - log_forward) return;

    const int left = tree.allocate();
    const int right = tree.allocate();
    auto& tn = tree.at(target);
    tn.left = left;
    tn.right = right;
    tn.var = pick.var;
    tn.cut = pick.cut;
    tree.at(left).parent = target;
    tree.at(left).depth = depth + 1;
    tree.at(right).parent = target;
    tree.at(right).depth = depth + 1;
    for (Eigen::Index i = 0; i < n_; ++i) {
      if (assign[static_cast<std::size_t>(i)] != target) continue;
      assign[static_cast<std::size_t>(i)] = X(i, pick.var) <= cut_value ? left : right;
    }
  }

  void prune_move(const Eigen::MatrixXd& X, Tree& tree, std::vector<int>& assign,
                  const Eigen::VectorXd& fit, const Eigen::VectorXd& residual, double sigma2,
                  const std::vector<int>& leaves, const std::vector<int>& nogs, Rng& rng) {
    if (nogs.empty()) return;
    const int target = nogs[rng.uniform_below(nogs.size())];
    const int left = tree.at(target).left, right = tree.at(target).right;

    double nl = 0.0, nr = 0.0, sl = 0.0, sr = 0.0;
    for (Eigen::Index i = 0; i < n_; ++i) {
      const int a = assign[static_cast<std::size_t>(i)];
      if (a != left && a != right) continue;
      const double rj = residual[i] + fit[i];
      if (a == left) {
        nl += 1.0;
        sl += rj;
      } else {
        nr += 1.0;
        sr += rj;
      }
    }

    const double log_like = leaf_marginal(nl + nr, sl + sr, sigma2) -
                            leaf_marginal(nl, sl, sigma2) - leaf_marginal(nr, sr, sigma2);
    const int depth = tree.at(target).depth;
    const double ps = split_prob(depth), ps_child = split_prob(depth + 1);
    const double log_prior = -(std::log(ps) + 2.0 * std::log(1.0 - ps_child) -
                               std::log(1.0 - ps));

    const RulePick reverse = describe_rule(tree, target);
    const bool single_after = target == 0;
    const double p_grow_after = single_after ? 1.0 : 0.28;
    const int n_leaves_after = static_cast<int>(leaves.size()) - 1;

    const double log_forward = std::log(0.28) - std::log(static_cast<double>(nogs.size()));
    const double log_backward =
        std::log(p_grow_after) - std::log(static_cast<double>(n_leaves_after)) -
        std::log(static_cast<double>(reverse.n_available_vars)) -
        std::log(static_cast<double>(reverse.window));

    if (std::log(rng.uniform01()) >= log_like + log_prior + log_backward - log_forward) return;

    (void)X;
    auto& tn = tree.at(target);
    tn.left = tn.right = -1;
    tn.var = tn.cut = -1;
    tree.release(left);
    tree.release(right);
    for (Eigen::Index i = 0; i < n_; ++i) {
      const int a = assign[static_cast<std::size_t>(i)];
      if (a == left || a == right) assign[static_cast<std::size_t>(i)] = target;
    }
  }

  void change_move(const Eigen::MatrixXd& X, Tree& tree, std::vector<int>& assign,
                   const Eigen::VectorXd& fit, const Eigen::VectorXd& residual, double sigma2,
                   const std::vector<int>& nogs, Rng& rng) {
    if (nogs.empty()) return;
    const int target = nogs[rng.uniform_below(nogs.size())];
    const RulePick pick = pick_rule(tree, target, rng);
    if (pick.var < 0) return;
    const double new_cut = cutpoints_[static_cast<std::size_t>(pick.var)]
                                     [static_cast<std::size_t>(pick.cut)];
    const int left = tree.at(target).left, right = tree.at(target).right;

    double nl = 0.0, nr = 0.0, sl = 0.0, sr = 0.0;       // current rule
    double nl2 = 0.0, nr2 = 0.0, sl2 = 0.0, sr2 = 0.0;   // proposed rule
    for (Eigen::Index i = 0; i < n_; ++i) {
      const int a = assign[static_cast<std::size_t>(i)];
      if (a != left && a != right) continue;
      const double rj = residual[i] + fit[i];
      if (a == left) {
        nl += 1.0;
        sl += rj;
      } else {
        nr += 1.0;
        sr += rj;
      }
      if (X(i, pick.var) <= new_cut) {
        nl2 += 1.0;
        sl2 += rj;
      } else {
        nr2 += 1.0;
        sr2 += rj;
      }
    }

    // Rule prior and proposal densities cancel; only the likelihood remains.
    const double log_like = leaf_marginal(nl2, sl2, sigma2) + leaf_marginal(nr2, sr2, sigma2) -
                            leaf_marginal(nl, sl, sigma2) - leaf_marginal(nr, sr, sigma2);
    if (std::log(rng.uniform01()) >= log_like) return;

    auto& tn = tree.at(target);
    tn.var = pick.var;
    tn.cut = pick.cut;
    for (Eigen::Index i = 0; i < n_; ++i) {
      const int a = assign[static_cast<std::size_t>(i)];
      if (a != left && a != right) continue;
      assign[static_cast<std::size_t>(i)] = X(i, pick.var) <= new_cut ? left : right;
    }
  }

  std::vector<std::vector<EvalNode>> flatten(const std::vector<Tree>& trees) const {
    std::vector<std::vector<EvalNode>> out;
    out.reserve(trees.size());
    for (const auto& tree : trees) {
      std::vector<EvalNode> flat;
      flatten_node(tree, 0, flat);
      out.push_back(std::move(flat));
    }
    return out;
  }

  int flatten_node(const Tree& tree, int node, std::vector<EvalNode>& flat) const {
    const auto& nd = tree.at(node);
    const int index = static_cast<int>(flat.size());
    flat.emplace_back();
    if (nd.is_leaf()) {
      flat[static_cast<std::size_t>(index)].leaf = nd.leaf;
      return index;
    }
    flat[static_cast<std::size_t>(index)].var = nd.var;
    flat[static_cast<std::size_t>(index)].cut =
        cutpoints_[static_cast<std::size_t>(nd.var)][static_cast<std::size_t>(nd.cut)];
    const int left = flatten_node(tree, nd.left, flat);
    const int right = flatten_node(tree, nd.right, flat);
    flat[static_cast<std::size_t>(index)].left = left;
    flat[static_cast<std::size_t>(index)].right = right;
    return index;
  }

  BartOptions options_;
  Eigen::Index n_ = 0;
  Eigen::Index p_ = 0;
  double y_mid_ = 0.0;
  double y_range_ = 1.0;
  double sigma_mu_ = 0.0;
  std::vector<std::vector<double>> cutpoints_;
  std::vector<std::vector<std::vector<EvalNode>>> kept_trees_;
  std::vector<double> kept_sigma_;
};

}  // namespace acelab

#endif  // ACELAB_BART_HPP
