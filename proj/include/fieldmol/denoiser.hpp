#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <vector>

#include "fieldmol/error.hpp"
#include "fieldmol/mfn.hpp"  // TensorRefT
#include "fieldmol/optim.hpp"
#include "fieldmol/persist.hpp"
#include "fieldmol/rng.hpp"
#include "fieldmol/trainer.hpp"

namespace fieldmol {

/// Residual MLP denoiser at a single noise level. No layer carries an
/// additive bias. Architecture, with B residual blocks (B even):
///   x0 = W_in y
///   block b: x <- x + FC2(drop(relu(GN2(FC1(relu(GN1(x)))))))
///   skip wiring: the inputs of the first B/2 blocks are recorded; before
///   each of the last B/2 blocks the running activation is concatenated with
///   its mirror (block B-1 pairs with the recorded input of block 0, i.e.
///   the embedding itself) and projected back to width by a mixing matrix.
///   zhat = W_out x
/// Group norm uses a learnable per-channel scale and no shift.
struct DenoiserConfig {
  int code_dim = 64;
  int hidden = 512;
  int blocks = 4;       // even
  double dropout = 0.3;
  double sigma = 1.2;   // noise std in normalized code space

  int groups() const { return hidden >= 256 ? 32 : 8; }

  void validate() const {
    if (code_dim < 1) throw ConfigError("denoiser.code_dim", "must be >= 1");
    if (hidden < code_dim) throw ConfigError("denoiser.hidden", "must be >= code_dim");
    if (blocks < 2 || blocks % 2 != 0)
      throw ConfigError("denoiser.blocks", "must be even and >= 2");
    if (hidden % groups() != 0)
      throw ConfigError("denoiser.hidden", "group count must divide the width");
    if (dropout < 0 || dropout >= 1) throw ConfigError("denoiser.dropout", "must be in [0, 1)");
    if (sigma <= 0) throw ConfigError("denoiser.sigma", "must be > 0");
  }
};

template <typename Scalar>
struct DenoiserParamsT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  DenoiserConfig cfg;
  Matrix w_in;                    // w x d
  std::vector<Vector> gn1_scale;  // blocks, w
  std::vector<Matrix> fc1;        // blocks, w x w
  std::vector<Vector> gn2_scale;  // blocks, w
  std::vector<Matrix> fc2;        // blocks, w x w
  std::vector<Matrix> w_mix;      // blocks/2, w x 2w
  Matrix w_out;                   // d x w

  void resize(const DenoiserConfig& c) {
    cfg = c;
    w_in = Matrix::Zero(c.hidden, c.code_dim);
    gn1_scale.assign(c.blocks, Vector::Ones(c.hidden));
    fc1.assign(c.blocks, Matrix::Zero(c.hidden, c.hidden));
    gn2_scale.assign(c.blocks, Vector::Ones(c.hidden));
    fc2.assign(c.blocks, Matrix::Zero(c.hidden, c.hidden));
    w_mix.assign(c.blocks / 2, Matrix::Zero(c.hidden, 2 * c.hidden));
    w_out = Matrix::Zero(c.code_dim, c.hidden);
  }

  std::vector<TensorRefT<Scalar>> tensor_refs() {
    std::vector<TensorRefT<Scalar>> refs;
    auto add = [&refs](const std::string& name, auto& m) {
      refs.push_back({name, m.data(), static_cast<std::size_t>(m.size()),
                      {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}});
    };
    add("in.w", w_in);
    for (int b = 0; b < cfg.blocks; ++b) {
      const std::string p = "block" + std::to_string(b);
      add(p + ".gn1", gn1_scale[b]);
      add(p + ".fc1", fc1[b]);
      add(p + ".gn2", gn2_scale[b]);
      add(p + ".fc2", fc2[b]);
    }
    for (int m = 0; m < cfg.blocks / 2; ++m) add("mix" + std::to_string(m) + ".w", w_mix[m]);
    add("out.w", w_out);
    return refs;
  }

  template <typename Other>
  DenoiserParamsT<Other> cast() const {
    DenoiserParamsT<Other> out;
    out.resize(cfg);
    out.w_in = w_in.template cast<Other>();
    for (int b = 0; b < cfg.blocks; ++b) {
      out.gn1_scale[b] = gn1_scale[b].template cast<Other>();
      out.fc1[b] = fc1[b].template cast<Other>();
      out.gn2_scale[b] = gn2_scale[b].template cast<Other>();
      out.fc2[b] = fc2[b].template cast<Other>();
    }
    for (std::size_t m = 0; m < w_mix.size(); ++m)
      out.w_mix[m] = w_mix[m].template cast<Other>();
    out.w_out = w_out.template cast<Other>();
    return out;
  }
};

template <typename Scalar>
DenoiserParamsT<Scalar> denoiser_zeros_like(const DenoiserParamsT<Scalar>& p) {
  DenoiserParamsT<Scalar> z;
  z.resize(p.cfg);
  for (auto& v : z.gn1_scale) v.setZero();
  for (auto& v : z.gn2_scale) v.setZero();
  return z;
}

template <typename Scalar>
DenoiserParamsT<Scalar> denoiser_init(const DenoiserConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DenoiserParamsT<Scalar> p;
  p.resize(cfg);  // group-norm scales start at 1
  Rng rng(substream(seed, 0x646e7a72ull));
  auto fill = [&rng](auto& m, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        m(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
  };
  fill(p.w_in, cfg.code_dim);
  for (int b = 0; b < cfg.blocks; ++b) {
    fill(p.fc1[b], cfg.hidden);
    fill(p.fc2[b], cfg.hidden);
  }
  for (auto& m : p.w_mix) fill(m, 2 * cfg.hidden);
  fill(p.w_out, cfg.hidden);
  return p;
}

template <typename Scalar>
struct DenoiserCacheT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  struct Block {
    Matrix input;       // block input (post-mix)
    Matrix xhat1;       // normalized pre-scale, m x w
    Matrix inv_std1;    // m x groups
    Matrix act1;        // relu(GN1 scaled)
    Matrix fc1_out;
    Matrix xhat2;
    Matrix inv_std2;
    Matrix act2;        // relu(GN2 scaled), pre-dropout
    Matrix dropped;     // after dropout (== act2 in eval mode)
    Matrix drop_mask;   // empty in eval mode
    Matrix concat;      // mix input [x, skip], decoder blocks only
  };

  Matrix input;  // y
  Matrix embed;  // W_in y
  std::vector<Block> blocks;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> final_x;
  int rows = 0;
};

namespace detail {

/// Group norm over each sample row: channels split into contiguous groups,
/// normalized by the group's population statistics, then scaled.
template <typename Scalar>
void group_norm_forward(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x,
                        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& scale, int groups,
                        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& xhat,
                        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& inv_std,
                        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& out) {
  const Eigen::Index m = x.rows(), w = x.cols();
  const Eigen::Index gs = w / groups;
  xhat.resize(m, w);
  inv_std.resize(m, groups);
  out.resize(m, w);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (int g = 0; g < groups; ++g) {
      const auto seg = x.row(i).segment(g * gs, gs);
      const Scalar mean = seg.mean();
      const Scalar var = (seg.array() - mean).square().mean();
      const Scalar istd = Scalar(1) / std::sqrt(var + Scalar(1e-5));
      inv_std(i, g) = istd;
      xhat.row(i).segment(g * gs, gs) = (seg.array() - mean) * istd;
    }
    out.row(i) = xhat.row(i).cwiseProduct(scale.transpose());
  }
}

template <typename Scalar>
void group_norm_backward(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& dout,
                         const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& xhat,
                         const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& inv_std,
                         const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& scale, int groups,
                         Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& dscale,
                         Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& dx) {
  const Eigen::Index m = dout.rows(), w = dout.cols();
  const Eigen::Index gs = w / groups;
  dx.resize(m, w);
  dscale.noalias() += (dout.array() * xhat.array()).matrix().colwise().sum().transpose();
  for (Eigen::Index i = 0; i < m; ++i) {
    for (int g = 0; g < groups; ++g) {
      const auto dy = dout.row(i).segment(g * gs, gs);
      const auto xh = xhat.row(i).segment(g * gs, gs);
      const auto sc = scale.segment(g * gs, gs);
      Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dxhat = dy.cwiseProduct(sc.transpose());
      const Scalar mean_dxhat = dxhat.mean();
      const Scalar mean_dxhat_xhat = dxhat.cwiseProduct(xh).mean();
      dx.row(i).segment(g * gs, gs) =
          (dxhat.array() - mean_dxhat - xh.array() * mean_dxhat_xhat) * inv_std(i, g);
    }
  }
}

}  // namespace detail

/// Forward pass. Dropout is applied only when dropout_rng is non-null
/// (training); inference is deterministic.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> denoiser_forward(
    const DenoiserParamsT<Scalar>& p, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& y,
    DenoiserCacheT<Scalar>* cache = nullptr, Rng* dropout_rng = nullptr) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const DenoiserConfig& cfg = p.cfg;
  if (y.cols() != cfg.code_dim) throw std::invalid_argument("denoiser: code dimension mismatch");
  if (!y.allFinite()) throw NumericError("denoiser: non-finite input");

  DenoiserCacheT<Scalar> local;
  DenoiserCacheT<Scalar>& c = cache ? *cache : local;
  c.blocks.assign(cfg.blocks, {});
  c.rows = static_cast<int>(y.rows());
  const int half = cfg.blocks / 2;

  c.input = y;
  Matrix x = y * p.w_in.transpose();
  c.embed = x;
  std::vector<Matrix> skips;  // inputs of the first half blocks
  for (int b = 0; b < cfg.blocks; ++b) {
    auto& cb = c.blocks[b];
    if (b >= half) {
      const Matrix& mirror = skips[cfg.blocks - 1 - b];
      cb.concat.resize(x.rows(), 2 * cfg.hidden);
      cb.concat.leftCols(cfg.hidden) = x;
      cb.concat.rightCols(cfg.hidden) = mirror;
      x = cb.concat * p.w_mix[b - half].transpose();
    } else {
      skips.push_back(x);
    }
    cb.input = x;

    Matrix gn1;
    detail::group_norm_forward(cb.input, p.gn1_scale[b], cfg.groups(), cb.xhat1, cb.inv_std1, gn1);
    cb.act1 = gn1.cwiseMax(Scalar(0));
    cb.fc1_out.noalias() = cb.act1 * p.fc1[b].transpose();
    Matrix gn2;
    detail::group_norm_forward(cb.fc1_out, p.gn2_scale[b], cfg.groups(), cb.xhat2, cb.inv_std2,
                               gn2);
    cb.act2 = gn2.cwiseMax(Scalar(0));
    if (dropout_rng && cfg.dropout > 0) {
      cb.drop_mask.resize(cb.act2.rows(), cb.act2.cols());
      const Scalar keep_inv = Scalar(1) / Scalar(1 - cfg.dropout);
      for (Eigen::Index i = 0; i < cb.drop_mask.rows(); ++i)
        for (Eigen::Index j = 0; j < cb.drop_mask.cols(); ++j)
          cb.drop_mask(i, j) = dropout_rng->uniform() < cfg.dropout ? Scalar(0) : keep_inv;
      cb.dropped = cb.act2.cwiseProduct(cb.drop_mask);
    } else {
      cb.dropped = cb.act2;
    }
    x += cb.dropped * p.fc2[b].transpose();  // residual add
  }
  c.final_x = x;
  Matrix out = x * p.w_out.transpose();
  if (!out.allFinite()) throw NumericError("denoiser: non-finite activations");
  return out;
}

/// Reverse-mode gradients; accumulates (+=) into grad.
template <typename Scalar>
void denoiser_backward(const DenoiserParamsT<Scalar>& p, const DenoiserCacheT<Scalar>& c,
                       const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& dout,
                       DenoiserParamsT<Scalar>& grad) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const DenoiserConfig& cfg = p.cfg;
  if (static_cast<int>(c.blocks.size()) != cfg.blocks || c.rows != dout.rows())
    throw std::invalid_argument("denoiser: stale or mismatched cache");
  const int half = cfg.blocks / 2;

  grad.w_out.noalias() += dout.transpose() * c.final_x;
  Matrix dx = dout * p.w_out;
  std::vector<Matrix> dskips(half);
  for (int i = 0; i < half; ++i)
    dskips[i] = Matrix::Zero(dout.rows(), cfg.hidden);

  for (int b = cfg.blocks - 1; b >= 0; --b) {
    const auto& cb = c.blocks[b];
    // Residual: dx splits into the skip path and the block body.
    Matrix dt = dx;  // gradient into fc2 output

    grad.fc2[b].noalias() += dt.transpose() * cb.dropped;
    Matrix dd = dt * p.fc2[b];
    if (cb.drop_mask.size() > 0) dd = dd.cwiseProduct(cb.drop_mask);
    // relu2
    dd = (cb.act2.array() > Scalar(0)).select(dd, Matrix::Zero(dd.rows(), dd.cols()));
    Matrix dfc1_out;
    detail::group_norm_backward(dd, cb.xhat2, cb.inv_std2, p.gn2_scale[b], cfg.groups(),
                                grad.gn2_scale[b], dfc1_out);
    grad.fc1[b].noalias() += dfc1_out.transpose() * cb.act1;
    Matrix da1 = dfc1_out * p.fc1[b];
    da1 = (cb.act1.array() > Scalar(0)).select(da1, Matrix::Zero(da1.rows(), da1.cols()));
    Matrix dinput;
    detail::group_norm_backward(da1, cb.xhat1, cb.inv_std1, p.gn1_scale[b], cfg.groups(),
                                grad.gn1_scale[b], dinput);
    dx += dinput;  // block input gradient = residual skip + body

    if (b >= half) {
      // Undo the mixing projection.
      grad.w_mix[b - half].noalias() += dx.transpose() * cb.concat;
      Matrix dconcat = dx * p.w_mix[b - half];
      dx = dconcat.leftCols(cfg.hidden);
      dskips[cfg.blocks - 1 - b] += dconcat.rightCols(cfg.hidden);
    } else {
      dx += dskips[b];  // this block's input also fed a decoder mix
    }
  }
  grad.w_in.noalias() += dx.transpose() * c.input;
}

/// Deterministic inference pass (dropout disabled).
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> denoise(
    const DenoiserParamsT<Scalar>& p,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& y) {
  return denoiser_forward(p, y);
}

/// Smoothed score from the denoiser: g(y) = (zhat(y) - y) / sigma^2.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> score(
    const DenoiserParamsT<Scalar>& p,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& y, double sigma) {
  if (sigma <= 0) throw std::invalid_argument("score: sigma must be > 0");
  return (denoise(p, y) - y) / (sigma * sigma);
}

using DenoiserParams = DenoiserParamsT<float>;

struct DenoiserTrainConfig {
  int epochs = 3000;
  int batch_size = 2048;  // capped at the dataset size
  double weight_decay = 1e-2;
  LrSchedule schedule;    // warmup 4000, peak 3e-4
  double ema_decay = 0.9999;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Denoiser training state: AdamW + warmup/sqrt-decay schedule + EMA shadow.
/// The EMA weights are what sampling consumes; raw weights stay in the
/// checkpoint alongside them.
class DenoiserTrainer {
 public:
  DenoiserTrainer(Eigen::MatrixXf normalized_codes, const DenoiserConfig& cfg,
                  const DenoiserTrainConfig& tcfg);

  /// One pass; returns the epoch mean of ||z - zhat||^2 / (batch * d).
  double run_epoch();
  void run(int epochs, std::ostream* log = nullptr);

  int epoch() const { return epoch_; }
  const std::vector<LossRecord>& history() const { return history_; }
  const DenoiserParams& params() const { return params_; }
  const DenoiserParams& ema_params() const { return ema_; }

  TensorContainer checkpoint() const;
  void restore(const TensorContainer& c);
  const std::optional<TensorContainer>& last_good_checkpoint() const { return last_good_; }

 private:
  Eigen::MatrixXf codes_;
  DenoiserConfig cfg_;
  DenoiserTrainConfig tcfg_;
  DenoiserParams params_;
  DenoiserParams ema_;
  AdamT<float> opt_;
  long long iter_ = 0;
  int epoch_ = 0;
  std::vector<LossRecord> history_;
  std::optional<TensorContainer> last_good_;
};

/// Denoiser checkpoint schema; the manifest carries sigma and the code
/// normalization stats (mean/std/min/max) so sampling is self-contained.
TensorContainer make_denoiser_checkpoint(const DenoiserParams& params, const DenoiserParams& ema,
                                         const CodeSet& codes);
struct DenoiserCheckpoint {
  DenoiserParams params;
  DenoiserParams ema;
  CodeSet code_stats;  // normalization stats + min/max; code matrix not included
};
DenoiserCheckpoint parse_denoiser_checkpoint(const TensorContainer& c);

}  // namespace fieldmol
