#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "fieldmol/error.hpp"
#include "fieldmol/rng.hpp"

namespace fieldmol {

/// Conditional multiplicative filter network with a Gabor basis. depth L
/// means L basis banks feeding L-1 FiLM-modulated multiplicative blocks and
/// one final affine layer:
///   h0 = s0(x)
///   hl = (gamma_l (.) (W_l h_{l-1}) + (b_l + beta_l)) (.) s_l(x)
///   f(x, z) = W_out h_{L-1} + b_out,   beta_l = Wb_l z, gamma_l = Wg_l z
/// Basis: s(x) = exp(-nu/2 |x - mu|^2) (cos(Omega x), sin(Omega x)); the
/// Gaussian envelope multiplies both halves of the concatenation.
struct MfnConfig {
  int depth = 4;
  int hidden = 256;  // must be even (cos/sin concatenation)
  int code_dim = 64;
  int out_channels = 4;
  double freq_scale = 128.0;  // std of Omega entries is freq_scale / sqrt(depth)

  void validate() const {
    if (depth < 2) throw ConfigError("mfn.depth", "must be >= 2");
    if (hidden < 2 || hidden % 2 != 0) throw ConfigError("mfn.hidden", "must be even and >= 2");
    if (code_dim < 1) throw ConfigError("mfn.code_dim", "must be >= 1");
    if (out_channels < 1) throw ConfigError("mfn.out_channels", "must be >= 1");
    if (freq_scale <= 0) throw ConfigError("mfn.freq_scale", "must be > 0");
  }
};

template <typename Scalar>
struct GaborBankT {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> mu;     // (h/2) x 3, normalized-cube units
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> nu;     // (h/2), positive scales
  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> omega;  // (h/2) x 3 frequencies
};

/// View of one named parameter tensor, consumed by the optimizer and by
/// persistence.
template <typename Scalar>
struct TensorRefT {
  std::string name;
  Scalar* data;
  std::size_t size;
  std::vector<std::size_t> shape;
};

template <typename Scalar>
struct MfnParamsT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  MfnConfig cfg;
  std::vector<GaborBankT<Scalar>> banks;  // depth
  std::vector<Matrix> w_film;             // depth-1, h x h
  std::vector<Vector> b_film;             // depth-1, h
  std::vector<Matrix> w_beta;             // depth-1, h x d
  std::vector<Matrix> w_gamma;            // depth-1, h x d
  Matrix w_out;                           // n x h
  Vector b_out;                           // n

  void resize(const MfnConfig& c) {
    cfg = c;
    const int half = c.hidden / 2;
    banks.assign(c.depth, {});
    for (auto& bank : banks) {
      bank.mu.setZero(half, 3);
      bank.nu.setZero(half);
      bank.omega.setZero(half, 3);
    }
    w_film.assign(c.depth - 1, Matrix::Zero(c.hidden, c.hidden));
    b_film.assign(c.depth - 1, Vector::Zero(c.hidden));
    w_beta.assign(c.depth - 1, Matrix::Zero(c.hidden, c.code_dim));
    w_gamma.assign(c.depth - 1, Matrix::Zero(c.hidden, c.code_dim));
    w_out = Matrix::Zero(c.out_channels, c.hidden);
    b_out = Vector::Zero(c.out_channels);
  }

  std::vector<TensorRefT<Scalar>> tensor_refs() {
    std::vector<TensorRefT<Scalar>> refs;
    auto add = [&refs](const std::string& name, auto& m) {
      refs.push_back({name, m.data(), static_cast<std::size_t>(m.size()),
                      {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}});
    };
    for (std::size_t l = 0; l < banks.size(); ++l) {
      const std::string p = "gabor" + std::to_string(l);
      add(p + ".mu", banks[l].mu);
      add(p + ".nu", banks[l].nu);
      add(p + ".omega", banks[l].omega);
    }
    for (std::size_t l = 0; l < w_film.size(); ++l) {
      const std::string p = "film" + std::to_string(l);
      add(p + ".w", w_film[l]);
      add(p + ".b", b_film[l]);
      add(p + ".w_beta", w_beta[l]);
      add(p + ".w_gamma", w_gamma[l]);
    }
    add("out.w", w_out);
    add("out.b", b_out);
    return refs;
  }

  template <typename Other>
  MfnParamsT<Other> cast() const {
    MfnParamsT<Other> out;
    out.resize(cfg);
    for (int l = 0; l < cfg.depth; ++l) {
      out.banks[l].mu = banks[l].mu.template cast<Other>();
      out.banks[l].nu = banks[l].nu.template cast<Other>();
      out.banks[l].omega = banks[l].omega.template cast<Other>();
    }
    for (int l = 0; l < cfg.depth - 1; ++l) {
      out.w_film[l] = w_film[l].template cast<Other>();
      out.b_film[l] = b_film[l].template cast<Other>();
      out.w_beta[l] = w_beta[l].template cast<Other>();
      out.w_gamma[l] = w_gamma[l].template cast<Other>();
    }
    out.w_out = w_out.template cast<Other>();
    out.b_out = b_out.template cast<Other>();
    return out;
  }
};

/// Per-layer activations retained by the forward pass for backward.
template <typename Scalar>
struct MfnCacheT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> pts;
  std::vector<Matrix> basis;                 // depth, m x h
  std::vector<Matrix> env, cosv, sinv, sqd;  // depth, m x h/2
  std::vector<Matrix> lin;                   // depth-1, m x h
  std::vector<Matrix> mod;                   // depth-1, m x h
  std::vector<Matrix> hidden;                // depth, m x h (hidden[0] == basis[0])
  std::vector<Vector> beta, gamma;           // depth-1
  int rows = 0;
};

template <typename Scalar>
MfnParamsT<Scalar> mfn_zeros_like(const MfnParamsT<Scalar>& p) {
  MfnParamsT<Scalar> z;
  z.resize(p.cfg);
  return z;
}

/// Deterministic initialization: Omega entries ~ N(0, (freq_scale/sqrt(L))^2),
/// nu ~ Gamma(1,1), mu ~ U(-1,1)^3, linear weights and biases ~ U(+-1/sqrt(fan_in)).
template <typename Scalar>
MfnParamsT<Scalar> mfn_init(const MfnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  MfnParamsT<Scalar> p;
  p.resize(cfg);
  Rng rng(substream(seed, 0x6d666e69ull));

  const double omega_std = cfg.freq_scale / std::sqrt(static_cast<double>(cfg.depth));
  for (auto& bank : p.banks) {
    for (Eigen::Index i = 0; i < bank.mu.rows(); ++i)
      for (int c = 0; c < 3; ++c) bank.mu(i, c) = static_cast<Scalar>(rng.uniform(-1.0, 1.0));
    for (Eigen::Index i = 0; i < bank.nu.size(); ++i)
      bank.nu(i) = static_cast<Scalar>(rng.exponential());
    for (Eigen::Index i = 0; i < bank.omega.rows(); ++i)
      for (int c = 0; c < 3; ++c) bank.omega(i, c) = static_cast<Scalar>(omega_std * rng.normal());
  }
  auto fill_uniform = [&rng](auto& m, double bound) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        m(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
  };
  const double lin_bound = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  const double code_bound = 1.0 / std::sqrt(static_cast<double>(cfg.code_dim));
  for (int l = 0; l < cfg.depth - 1; ++l) {
    fill_uniform(p.w_film[l], lin_bound);
    fill_uniform(p.b_film[l], lin_bound);
    fill_uniform(p.w_beta[l], code_bound);
    fill_uniform(p.w_gamma[l], code_bound);
  }
  fill_uniform(p.w_out, lin_bound);
  fill_uniform(p.b_out, lin_bound);
  return p;
}

namespace detail {

template <typename Scalar>
void gabor_basis(const GaborBankT<Scalar>& bank,
                 const Eigen::Matrix<Scalar, Eigen::Dynamic, 3>& pts, MfnCacheT<Scalar>& c,
                 int l) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index m = pts.rows();
  const Eigen::Index half = bank.mu.rows();

  Matrix phase = pts * bank.omega.transpose();  // m x half

  Matrix& sqd = c.sqd[l];
  sqd.noalias() = Scalar(-2) * (pts * bank.mu.transpose());
  sqd.colwise() += pts.rowwise().squaredNorm();
  sqd.rowwise() += bank.mu.rowwise().squaredNorm().transpose();
  sqd = sqd.cwiseMax(Scalar(0));  // cancellation guard

  c.env[l] = (sqd.array().rowwise() * (Scalar(-0.5) * bank.nu).transpose().array()).exp();
  c.cosv[l] = phase.array().cos();
  c.sinv[l] = phase.array().sin();

  Matrix& basis = c.basis[l];
  basis.resize(m, 2 * half);
  basis.leftCols(half) = c.env[l].array() * c.cosv[l].array();
  basis.rightCols(half) = c.env[l].array() * c.sinv[l].array();
}

/// Given dS for bank l, accumulates Gabor parameter gradients and, when dpts
/// is non-null, the gradient with respect to the input points.
template <typename Scalar>
void gabor_backward(const GaborBankT<Scalar>& bank, const MfnCacheT<Scalar>& c, int l,
                    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& dS,
                    GaborBankT<Scalar>* bank_grad,
                    Eigen::Matrix<Scalar, Eigen::Dynamic, 3>* dpts) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index half = bank.mu.rows();
  const auto& E = c.env[l];
  const auto& C = c.cosv[l];
  const auto& Sn = c.sinv[l];
  const auto dP = dS.leftCols(half);
  const auto dQ = dS.rightCols(half);

  Matrix dE = dP.array() * C.array() + dQ.array() * Sn.array();
  Matrix dPhase = E.array() * (dQ.array() * C.array() - dP.array() * Sn.array());
  Matrix dEE = dE.array() * E.array();
  Matrix dD = dEE.array().rowwise() * (Scalar(-0.5) * bank.nu).transpose().array();

  if (bank_grad) {
    bank_grad->omega.noalias() += dPhase.transpose() * c.pts;
    bank_grad->nu.noalias() +=
        Scalar(-0.5) * (dEE.array() * c.sqd[l].array()).matrix().colwise().sum().transpose();
    // dD(i,j)/dmu_j = 2 (mu_j - x_i)
    Vector col_sums = dD.colwise().sum().transpose();
    bank_grad->mu.noalias() +=
        Scalar(2) * (col_sums.asDiagonal() * bank.mu - dD.transpose() * c.pts);
  }
  if (dpts) {
    dpts->noalias() += dPhase * bank.omega;
    // dD(i,j)/dx_i = 2 (x_i - mu_j)
    Vector row_sums = dD.rowwise().sum();
    dpts->noalias() += Scalar(2) * (row_sums.asDiagonal() * c.pts - dD * bank.mu);
  }
}

template <typename Scalar>
void mfn_backward_impl(const MfnParamsT<Scalar>& p, const MfnCacheT<Scalar>& cache,
                       const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& dout,
                       const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* code,
                       MfnParamsT<Scalar>* grad, Eigen::Matrix<Scalar, Eigen::Dynamic, 1>* dcode,
                       Eigen::Matrix<Scalar, Eigen::Dynamic, 3>* dpts) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const MfnConfig& cfg = p.cfg;
  const int L = cfg.depth;
  if (static_cast<int>(cache.hidden.size()) != L || cache.rows != dout.rows() ||
      dout.cols() != cfg.out_channels)
    throw std::invalid_argument("stale or mismatched forward cache");

  if (grad) {
    grad->w_out.noalias() += dout.transpose() * cache.hidden[L - 1];
    grad->b_out.noalias() += dout.colwise().sum().transpose();
  }
  Matrix dH = dout * p.w_out;

  for (int l = L - 1; l >= 1; --l) {
    const int il = l - 1;
    Matrix dM = dH.array() * cache.basis[l].array();
    Matrix dS = dH.array() * cache.mod[il].array();
    gabor_backward(p.banks[l], cache, l, dS, grad ? &grad->banks[l] : nullptr, dpts);

    if (grad || dcode) {
      Vector db = dM.colwise().sum().transpose();
      Vector dgamma = (dM.array() * cache.lin[il].array()).matrix().colwise().sum().transpose();
      if (grad) {
        grad->b_film[il] += db;
        grad->w_beta[il].noalias() += db * code->transpose();
        grad->w_gamma[il].noalias() += dgamma * code->transpose();
      }
      if (dcode) {
        dcode->noalias() += p.w_beta[il].transpose() * db;
        dcode->noalias() += p.w_gamma[il].transpose() * dgamma;
      }
    }
    Matrix dA = dM.array().rowwise() * cache.gamma[il].transpose().array();
    if (grad) grad->w_film[il].noalias() += dA.transpose() * cache.hidden[l - 1];
    dH.noalias() = dA * p.w_film[il];
  }
  // hidden[0] == basis[0], so dH is already the basis gradient of bank 0.
  gabor_backward(p.banks[0], cache, 0, dH, grad ? &grad->banks[0] : nullptr, dpts);
}

}  // namespace detail

/// Forward evaluation over a batch of normalized points; one row per point.
/// When cache is non-null it is filled for a later backward call.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> mfn_forward(
    const MfnParamsT<Scalar>& p, const Eigen::Matrix<Scalar, Eigen::Dynamic, 3>& pts,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& code, MfnCacheT<Scalar>* cache = nullptr) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const MfnConfig& cfg = p.cfg;
  if (code.size() != cfg.code_dim) throw std::invalid_argument("code dimension mismatch");

  const int L = cfg.depth;
  MfnCacheT<Scalar> local;
  MfnCacheT<Scalar>& c = cache ? *cache : local;
  c.pts = pts;
  c.rows = static_cast<int>(pts.rows());
  c.basis.assign(L, {});
  c.env.assign(L, {});
  c.cosv.assign(L, {});
  c.sinv.assign(L, {});
  c.sqd.assign(L, {});
  c.lin.assign(L - 1, {});
  c.mod.assign(L - 1, {});
  c.hidden.assign(L, {});
  c.beta.assign(L - 1, {});
  c.gamma.assign(L - 1, {});

  for (int l = 0; l < L; ++l) detail::gabor_basis(p.banks[l], pts, c, l);

  c.hidden[0] = c.basis[0];
  for (int l = 1; l < L; ++l) {
    const int il = l - 1;
    c.beta[il] = p.w_beta[il] * code;
    c.gamma[il] = p.w_gamma[il] * code;
    c.lin[il].noalias() = c.hidden[l - 1] * p.w_film[il].transpose();
    const Vector shift = p.b_film[il] + c.beta[il];
    c.mod[il] = c.lin[il].array().rowwise() * c.gamma[il].transpose().array();
    c.mod[il].rowwise() += shift.transpose();
    c.hidden[l] = c.mod[il].array() * c.basis[l].array();
  }

  Matrix out = c.hidden[L - 1] * p.w_out.transpose();
  out.rowwise() += p.b_out.transpose();
  return out;
}

/// Reverse-mode gradients of a scalar loss whose output gradient is dout.
/// Accumulates (+=) into grad and dcode; dpts, when non-null, additionally
/// receives the gradient with respect to the input points.
template <typename Scalar>
void mfn_backward(const MfnParamsT<Scalar>& p, const MfnCacheT<Scalar>& cache,
                  const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& dout,
                  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& code, MfnParamsT<Scalar>& grad,
                  Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& dcode,
                  Eigen::Matrix<Scalar, Eigen::Dynamic, 3>* dpts = nullptr) {
  detail::mfn_backward_impl<Scalar>(p, cache, dout, &code, &grad, &dcode, dpts);
}

/// Spatial gradient only; parameter and code gradients are skipped.
template <typename Scalar>
void mfn_backward_spatial(const MfnParamsT<Scalar>& p, const MfnCacheT<Scalar>& cache,
                          const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& dout,
                          Eigen::Matrix<Scalar, Eigen::Dynamic, 3>& dpts) {
  detail::mfn_backward_impl<Scalar>(p, cache, dout, nullptr, nullptr, nullptr, &dpts);
}

/// Code gradient only; parameter gradients are skipped (test-time fitting).
template <typename Scalar>
void mfn_backward_code_only(const MfnParamsT<Scalar>& p, const MfnCacheT<Scalar>& cache,
                            const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& dout,
                            Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& dcode) {
  detail::mfn_backward_impl<Scalar>(p, cache, dout, nullptr, nullptr, &dcode, nullptr);
}

/// d[f(x, z)]_channel / dx at a single point.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> mfn_grad_x(const MfnParamsT<Scalar>& p,
                                       const Eigen::Matrix<Scalar, 3, 1>& x,
                                       const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& code,
                                       int channel) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> pts(1, 3);
  pts.row(0) = x.transpose();
  MfnCacheT<Scalar> cache;
  mfn_forward(p, pts, code, &cache);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> dout =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(1, p.cfg.out_channels);
  dout(0, channel) = Scalar(1);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 3> dpts =
      Eigen::Matrix<Scalar, Eigen::Dynamic, 3>::Zero(1, 3);
  mfn_backward_spatial(p, cache, dout, dpts);
  return dpts.row(0).transpose();
}

using MfnParams = MfnParamsT<float>;
using MfnCache = MfnCacheT<float>;

}  // namespace fieldmol
