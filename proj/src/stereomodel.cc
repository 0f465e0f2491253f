#include "tstereo/stereomodel.h"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tstereo/io.h"
#include "tstereo/rng.h"

namespace tstereo {

DisparityHypotheses DisparityHypotheses::uniform(double min, double max,
                                                 double step) {
  if (!(step > 0.0) || !(max > min))
    throw std::invalid_argument("hypotheses need min < max and step > 0");
  DisparityHypotheses h;
  const int n = static_cast<int>(std::floor((max - min) / step + 1e-9)) + 1;
  for (int i = 0; i < n; ++i) h.values.push_back(min + step * i);
  h.validate();
  return h;
}

DisparityHypotheses DisparityHypotheses::for_rig(const CameraRig& rig) {
  return uniform(rig.disparity_min, rig.disparity_max, 1.0);
}

void DisparityHypotheses::validate() const {
  if (values.size() < 2)
    throw std::invalid_argument("need at least two disparity hypotheses");
  for (std::size_t i = 1; i < values.size(); ++i)
    if (!(values[i] > values[i - 1]))
      throw std::invalid_argument("hypotheses must be strictly increasing");
}

const char* role_name(ModelRole role) {
  switch (role) {
    case ModelRole::kUntrained: return "untrained";
    case ModelRole::kPretrained: return "pretrained";
    case ModelRole::kSurrogate: return "surrogate";
    case ModelRole::kFinetuned: return "finetuned";
  }
  return "?";
}

double ModelState::temperature() const { return std::exp(log_temperature); }

void ModelState::set_temperature(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be > 0");
  log_temperature = std::log(tau);
}

void ModelState::validate() const {
  if (embed_dim <= 0 || feature_dim != descriptor.dim())
    throw std::invalid_argument("model dimensions inconsistent");
  if (weights.size() != static_cast<std::size_t>(embed_dim) * feature_dim)
    throw std::invalid_argument("weight count mismatch");
  if (!std::isfinite(log_temperature))
    throw std::invalid_argument("non-finite temperature");
  for (double w : weights)
    if (!std::isfinite(w)) throw std::invalid_argument("non-finite weight");
}

ModelState random_state(int embed_dim, const DescriptorConfig& descriptor,
                        std::uint64_t seed, double scale, double temperature) {
  ModelState s;
  s.embed_dim = embed_dim;
  s.feature_dim = descriptor.dim();
  s.descriptor = descriptor;
  s.set_temperature(temperature);
  std::mt19937_64 rng(mix_seed(seed, 0x3e1));
  std::normal_distribution<double> normal(0.0, scale);
  s.weights.resize(static_cast<std::size_t>(embed_dim) * s.feature_dim);
  for (double& w : s.weights) w = normal(rng);
  return s;
}

ModelState pca_state(std::span<const SceneSample> samples, int embed_dim,
                     const DescriptorConfig& descriptor, double scale,
                     double temperature) {
  const int dim = descriptor.dim();
  if (embed_dim > dim)
    throw std::invalid_argument("embed_dim exceeds descriptor dimension");
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  long count = 0;
  for (const auto& s : samples) {
    for (const Image* img : {&s.left, &s.right}) {
      const DescriptorField field = compute_descriptors(*img, descriptor);
      for (int y = 0; y < field.height; y += 2) {
        for (int x = 0; x < field.width; x += 2) {
          const auto v = field.at(x, y);
          Eigen::Map<const Eigen::VectorXd> phi(v.data(), dim);
          cov.noalias() += phi * phi.transpose();
          ++count;
        }
      }
    }
  }
  if (count == 0) throw std::invalid_argument("pca_state needs samples");
  cov /= static_cast<double>(count);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  ModelState s;
  s.embed_dim = embed_dim;
  s.feature_dim = dim;
  s.descriptor = descriptor;
  s.set_temperature(temperature);
  s.weights.resize(static_cast<std::size_t>(embed_dim) * dim);
  // Eigenvalues ascend; take the last embed_dim columns, largest first.
  for (int e = 0; e < embed_dim; ++e) {
    Eigen::VectorXd v = solver.eigenvectors().col(dim - 1 - e);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    for (int f = 0; f < dim; ++f) s.weights[e * dim + f] = scale * v(f);
  }
  return s;
}

std::vector<double> extract_descriptor(const Image& image, int u, int v,
                                       int patch_radius, bool normalize) {
  const int side = 2 * patch_radius + 1;
  std::vector<double> out(static_cast<std::size_t>(side) * side);
  std::size_t i = 0;
  double mean = 0.0;
  for (int dy = -patch_radius; dy <= patch_radius; ++dy) {
    const int y = std::clamp(v + dy, 0, image.height() - 1);
    for (int dx = -patch_radius; dx <= patch_radius; ++dx) {
      const int x = std::clamp(u + dx, 0, image.width() - 1);
      out[i++] = image.at(x, y);
    }
  }
  for (double x : out) mean += x;
  mean /= static_cast<double>(out.size());
  double norm2 = 0.0;
  for (double& x : out) {
    x -= mean;
    norm2 += x * x;
  }
  if (norm2 < 1e-20) {
    std::fill(out.begin(), out.end(), 0.0);
    return out;
  }
  if (normalize) {
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : out) x *= inv;
  }
  return out;
}

DescriptorField compute_descriptors(const Image& image,
                                    const DescriptorConfig& cfg) {
  DescriptorField field;
  field.width = image.width();
  field.height = image.height();
  field.dim = cfg.dim();
  field.values.reserve(image.size() * static_cast<std::size_t>(field.dim));
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const auto d = extract_descriptor(image, x, y, cfg.patch_radius, cfg.normalize);
      field.values.insert(field.values.end(), d.begin(), d.end());
    }
  }
  return field;
}

StereoFeatures compute_features(const SceneSample& sample,
                                const DescriptorConfig& cfg) {
  return {compute_descriptors(sample.left, cfg),
          compute_descriptors(sample.right, cfg)};
}

double smooth_l1(double r, double beta) {
  const double a = std::abs(r);
  return a < beta ? 0.5 * r * r / beta : a - 0.5 * beta;
}

double smooth_l1_derivative(double r, double beta) {
  if (std::abs(r) < beta) return r / beta;
  return r > 0.0 ? 1.0 : -1.0;
}

namespace {

struct Shift {
  int x0 = 0;
  double frac = 0.0;
  bool valid = false;
};

// Per-row evaluation of the cost volume. Right-view embeddings for the
// whole row are computed on load; left embeddings per pixel on demand.
class RowKernel {
 public:
  RowKernel(const ModelState& state, const StereoFeatures& features,
            const DisparityHypotheses& hyps)
      : state_(state), features_(features), hyps_(hyps),
        width_(features.width()), depth_(hyps.size()), embed_(state.embed_dim),
        inv_tau_(1.0 / state.temperature()),
        shifts_(static_cast<std::size_t>(width_) * depth_),
        right_(static_cast<std::size_t>(width_) * embed_) {
    if (features.left.dim != state.feature_dim)
      throw std::invalid_argument("descriptor/model dimension mismatch");
    for (int u = 0; u < width_; ++u) {
      for (int k = 0; k < depth_; ++k) {
        const double x = u - hyps.values[k];
        Shift& s = shifts_[static_cast<std::size_t>(u) * depth_ + k];
        if (x < -1e-9) continue;
        s.valid = true;
        s.x0 = std::max(0, static_cast<int>(std::floor(x + 1e-9)));
        s.frac = std::max(0.0, x - s.x0);
        if (s.frac < 1e-12 || s.x0 + 1 >= width_) s.frac = 0.0;
      }
    }
  }

  int depth() const { return depth_; }
  int embed() const { return embed_; }
  double inv_tau() const { return inv_tau_; }
  const Shift& shift(int u, int k) const {
    return shifts_[static_cast<std::size_t>(u) * depth_ + k];
  }
  const double* right(int x) const {
    return right_.data() + static_cast<std::size_t>(x) * embed_;
  }

  void load_row(int y) {
    y_ = y;
    for (int x = 0; x < width_; ++x) embed(features_.right.at(x, y), &right_[static_cast<std::size_t>(x) * embed_]);
  }

  void embed(std::span<const double> phi, double* out) const {
    const int f_dim = state_.feature_dim;
    for (int e = 0; e < embed_; ++e) {
      const double* w = state_.weights.data() + static_cast<std::size_t>(e) * f_dim;
      double acc = 0.0;
      for (int f = 0; f < f_dim; ++f) acc += w[f] * phi[f];
      out[e] = acc;
    }
  }

  // Fills scores, log-probabilities and probabilities for pixel u of the
  // loaded row; returns (expected disparity, entropy).
  std::pair<double, double> forward(int u, const double* left_embed,
                                    double* scores, double* logp,
                                    double* prob) const {
    double max_score = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < depth_; ++k) {
      const Shift& s = shift(u, k);
      double score = kInvalidShiftScore;
      if (s.valid) {
        const double* b0 = right(s.x0);
        double dot = 0.0;
        if (s.frac == 0.0) {
          for (int e = 0; e < embed_; ++e) dot += left_embed[e] * b0[e];
        } else {
          const double* b1 = right(s.x0 + 1);
          for (int e = 0; e < embed_; ++e)
            dot += left_embed[e] * ((1.0 - s.frac) * b0[e] + s.frac * b1[e]);
        }
        score = dot * inv_tau_;
      }
      scores[k] = score;
      max_score = std::max(max_score, score);
    }
    double z = 0.0;
    for (int k = 0; k < depth_; ++k) z += std::exp(scores[k] - max_score);
    const double log_z = max_score + std::log(z);
    double f = 0.0;
    double entropy = 0.0;
    for (int k = 0; k < depth_; ++k) {
      logp[k] = scores[k] - log_z;
      prob[k] = std::exp(logp[k]);
      f += hyps_.values[k] * prob[k];
      entropy -= prob[k] * logp[k];
    }
    // Rounding can push a saturated expectation a few ulps past the hull.
    return {std::clamp(f, hyps_.min(), hyps_.max()), entropy};
  }

 private:
  const ModelState& state_;
  const StereoFeatures& features_;
  const DisparityHypotheses& hyps_;
  int width_;
  int depth_;
  int embed_;
  double inv_tau_;
  std::vector<Shift> shifts_;
  std::vector<double> right_;
  int y_ = -1;
};

// Runs fn(block) for blocks [0, n) on up to `threads` threads. Callers
// write into per-block slots so the reduction order stays fixed.
template <typename Fn>
void for_each_block(int n, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int b = 0; b < n; ++b) fn(b);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (int b = t; b < n; b += threads) fn(b);
    });
  }
  for (auto& th : pool) th.join();
}

constexpr int kRowsPerBlock = 4;

}  // namespace

Volume score_volume(const StereoFeatures& features, const ModelState& state,
                    const DisparityHypotheses& hyps) {
  hyps.validate();
  const int w = features.width();
  const int h = features.height();
  Volume scores(w, h, hyps.size());
  RowKernel kernel(state, features, hyps);
  std::vector<double> a(state.embed_dim), logp(hyps.size()), prob(hyps.size());
  for (int y = 0; y < h; ++y) {
    kernel.load_row(y);
    for (int u = 0; u < w; ++u) {
      kernel.embed(features.left.at(u, y), a.data());
      kernel.forward(u, a.data(), scores.pixel(u, y).data(), logp.data(), prob.data());
    }
  }
  return scores;
}

Volume score_volume(const SceneSample& sample, const ModelState& state,
                    const DisparityHypotheses& hyps) {
  return score_volume(compute_features(sample, state.descriptor), state, hyps);
}

Volume softmax_over_hypotheses(const Volume& scores) {
  Volume out(scores.width(), scores.height(), scores.depth());
  const std::size_t n = static_cast<std::size_t>(scores.width()) * scores.height();
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = scores.pixel(i);
    auto p = out.pixel(i);
    const double m = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      p[k] = std::exp(s[k] - m);
      z += p[k];
    }
    for (double& v : p) v /= z;
  }
  return out;
}

Image predict_disparity(const Volume& probability,
                        const DisparityHypotheses& hyps) {
  if (probability.depth() != hyps.size())
    throw std::invalid_argument("volume depth != hypothesis count");
  Image out(probability.width(), probability.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto p = probability.pixel(i);
    double f = 0.0;
    for (int k = 0; k < hyps.size(); ++k) f += hyps.values[k] * p[k];
    out[i] = std::clamp(f, hyps.min(), hyps.max());
  }
  return out;
}

Inference infer(const StereoFeatures& features, const ModelState& state,
                const DisparityHypotheses& hyps) {
  hyps.validate();
  const int w = features.width();
  const int h = features.height();
  const int depth = hyps.size();
  Inference out{Volume(w, h, depth), Image(w, h)};
  RowKernel kernel(state, features, hyps);
  std::vector<double> a(state.embed_dim), scores(depth), logp(depth);
  for (int y = 0; y < h; ++y) {
    kernel.load_row(y);
    for (int u = 0; u < w; ++u) {
      kernel.embed(features.left.at(u, y), a.data());
      out.disparity.at(u, y) =
          kernel.forward(u, a.data(), scores.data(), logp.data(),
                         out.probability.pixel(u, y).data()).first;
    }
  }
  return out;
}

Image entropy_map(const Volume& probability) {
  Image out(probability.width(), probability.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double h = 0.0;
    for (double p : probability.pixel(i))
      if (p > 0.0) h -= p * std::log(p);
    out[i] = h;
  }
  return out;
}

void Objective::append(const Objective& other, double scale) {
  if (empty() && width == 0) {
    width = other.width;
    height = other.height;
    smooth_l1_beta = other.smooth_l1_beta;
  } else if (other.width != width || other.height != height) {
    throw std::invalid_argument("objective shape mismatch");
  }
  for (DisparityTerm t : other.terms) {
    t.weight *= scale;
    terms.push_back(t);
  }
  for (auto [pixel, w] : other.entropy_terms)
    entropy_terms.emplace_back(pixel, w * scale);
}

Objective dense_smooth_l1_objective(const Image& target, double beta) {
  Objective obj;
  obj.width = target.width();
  obj.height = target.height();
  obj.smooth_l1_beta = beta;
  std::size_t valid = 0;
  for (double t : target.values()) valid += is_valid(t) ? 1 : 0;
  if (valid == 0) return obj;
  const double w = 1.0 / static_cast<double>(valid);
  for (std::size_t i = 0; i < target.size(); ++i)
    if (is_valid(target[i]))
      obj.terms.push_back({static_cast<int>(i), target[i], w, Penalty::kSmoothL1});
  return obj;
}

Objective entropy_objective(std::span<const int> pixels, const Image& anchor,
                            double lambda_l2) {
  Objective obj;
  obj.width = anchor.width();
  obj.height = anchor.height();
  if (!pixels.empty()) {
    const double w = 1.0 / static_cast<double>(pixels.size());
    for (int p : pixels) obj.entropy_terms.emplace_back(p, w);
  }
  if (lambda_l2 != 0.0) {
    const double w = lambda_l2 / static_cast<double>(anchor.size());
    for (std::size_t i = 0; i < anchor.size(); ++i)
      obj.terms.push_back({static_cast<int>(i), anchor[i], w, Penalty::kSquared});
  }
  return obj;
}

namespace {

struct ActivePixel {
  int pixel;
  std::size_t term_begin;
  std::size_t term_end;
  double entropy_weight;
};

struct Partial {
  double loss = 0.0;
  std::vector<double> grad_w;
  double grad_tau = 0.0;
};

LossGradient run_objective(const ModelState& state,
                           const StereoFeatures& features,
                           const DisparityHypotheses& hyps,
                           const Objective& objective,
                           const EvalOptions& options, bool with_gradient) {
  hyps.validate();
  const int w = features.width();
  const int h = features.height();
  if (objective.width != w || objective.height != h)
    throw std::invalid_argument("objective shape does not match features");

  std::vector<DisparityTerm> terms = objective.terms;
  std::stable_sort(terms.begin(), terms.end(),
                   [](const auto& a, const auto& b) { return a.pixel < b.pixel; });
  std::vector<std::pair<int, double>> entropy = objective.entropy_terms;
  std::stable_sort(entropy.begin(), entropy.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<ActivePixel> active;
  {
    std::size_t ti = 0;
    std::size_t ei = 0;
    while (ti < terms.size() || ei < entropy.size()) {
      const int next = std::min(
          ti < terms.size() ? terms[ti].pixel : std::numeric_limits<int>::max(),
          ei < entropy.size() ? entropy[ei].first : std::numeric_limits<int>::max());
      if (next < 0 || next >= w * h)
        throw std::out_of_range("objective pixel outside image");
      ActivePixel a{next, ti, ti, 0.0};
      while (ti < terms.size() && terms[ti].pixel == next) ++ti;
      a.term_end = ti;
      while (ei < entropy.size() && entropy[ei].first == next)
        a.entropy_weight += entropy[ei++].second;
      active.push_back(a);
    }
  }

  // Row ranges into `active`.
  std::vector<std::size_t> row_start(h + 1, active.size());
  for (std::size_t i = active.size(); i-- > 0;) row_start[active[i].pixel / w] = i;
  for (int y = h - 1; y >= 0; --y)
    if (row_start[y] > row_start[y + 1]) row_start[y] = row_start[y + 1];

  const int n_blocks = (h + kRowsPerBlock - 1) / kRowsPerBlock;
  const std::size_t n_weights = state.weights.size();
  std::vector<Partial> partials(n_blocks);
  const double beta = objective.smooth_l1_beta;

  for_each_block(n_blocks, options.threads, [&](int block) {
    Partial& part = partials[block];
    if (with_gradient) part.grad_w.assign(n_weights, 0.0);
    RowKernel kernel(state, features, hyps);
    const int depth = kernel.depth();
    const int embed = kernel.embed();
    const int f_dim = state.feature_dim;
    std::vector<double> a(embed), ga(embed), scores(depth), logp(depth),
        prob(depth), right_grad;
    for (int y = block * kRowsPerBlock;
         y < std::min(h, (block + 1) * kRowsPerBlock); ++y) {
      if (row_start[y] == row_start[y + 1]) continue;
      kernel.load_row(y);
      if (with_gradient) right_grad.assign(static_cast<std::size_t>(w) * embed, 0.0);
      for (std::size_t i = row_start[y]; i < row_start[y + 1]; ++i) {
        const ActivePixel& px = active[i];
        const int u = px.pixel % w;
        const auto phi_l = features.left.at(u, y);
        kernel.embed(phi_l, a.data());
        const auto [f, entropy_value] =
            kernel.forward(u, a.data(), scores.data(), logp.data(), prob.data());

        double grad_f = 0.0;
        for (std::size_t t = px.term_begin; t < px.term_end; ++t) {
          const DisparityTerm& term = terms[t];
          const double r = f - term.target;
          if (term.penalty == Penalty::kSmoothL1) {
            part.loss += term.weight * smooth_l1(r, beta);
            grad_f += term.weight * smooth_l1_derivative(r, beta);
          } else {
            part.loss += term.weight * r * r;
            grad_f += term.weight * 2.0 * r;
          }
        }
        part.loss += px.entropy_weight * entropy_value;
        if (!with_gradient) continue;

        // dL/dS_k = p_k [g_f (d_k - f) - e (log p_k + H)]
        std::fill(ga.begin(), ga.end(), 0.0);
        const double inv_tau = kernel.inv_tau();
        for (int k = 0; k < depth; ++k) {
          const Shift& s = kernel.shift(u, k);
          if (!s.valid || prob[k] == 0.0) continue;
          const double g_score =
              prob[k] * (grad_f * (hyps.values[k] - f) -
                         px.entropy_weight * (logp[k] + entropy_value));
          if (g_score == 0.0) continue;
          part.grad_tau -= g_score * scores[k] * inv_tau;
          const double c = g_score * inv_tau;
          const double* b0 = kernel.right(s.x0);
          double* gb0 = &right_grad[static_cast<std::size_t>(s.x0) * embed];
          if (s.frac == 0.0) {
            for (int e = 0; e < embed; ++e) {
              ga[e] += c * b0[e];
              gb0[e] += c * a[e];
            }
          } else {
            const double* b1 = kernel.right(s.x0 + 1);
            double* gb1 = gb0 + embed;
            const double w0 = 1.0 - s.frac;
            const double w1 = s.frac;
            for (int e = 0; e < embed; ++e) {
              ga[e] += c * (w0 * b0[e] + w1 * b1[e]);
              gb0[e] += c * w0 * a[e];
              gb1[e] += c * w1 * a[e];
            }
          }
        }
        for (int e = 0; e < embed; ++e) {
          if (ga[e] == 0.0) continue;
          double* row = part.grad_w.data() + static_cast<std::size_t>(e) * f_dim;
          for (int f2 = 0; f2 < f_dim; ++f2) row[f2] += ga[e] * phi_l[f2];
        }
      }
      if (!with_gradient) continue;
      for (int x = 0; x < w; ++x) {
        const double* gb = &right_grad[static_cast<std::size_t>(x) * embed];
        const auto phi_r = features.right.at(x, y);
        for (int e = 0; e < embed; ++e) {
          if (gb[e] == 0.0) continue;
          double* row = part.grad_w.data() + static_cast<std::size_t>(e) * f_dim;
          for (int f2 = 0; f2 < f_dim; ++f2) row[f2] += gb[e] * phi_r[f2];
        }
      }
    }
  });

  LossGradient out;
  if (with_gradient) out.grad_weights.assign(n_weights, 0.0);
  for (const Partial& p : partials) {
    out.loss += p.loss;
    if (!with_gradient) continue;
    out.grad_temperature += p.grad_tau;
    for (std::size_t i = 0; i < n_weights; ++i) out.grad_weights[i] += p.grad_w[i];
  }
  return out;
}

}  // namespace

LossGradient loss_gradients(const ModelState& state,
                            const StereoFeatures& features,
                            const DisparityHypotheses& hyps,
                            const Objective& objective,
                            const EvalOptions& options) {
  return run_objective(state, features, hyps, objective, options, true);
}

double evaluate_loss(const ModelState& state, const StereoFeatures& features,
                     const DisparityHypotheses& hyps,
                     const Objective& objective, const EvalOptions& options) {
  return run_objective(state, features, hyps, objective, options, false).loss;
}

void adam_step(std::span<double> params, std::span<const double> grads,
               AdamMoments& moments, const AdamConfig& cfg) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam: params/grads size mismatch");
  if (moments.m.empty()) {
    moments.m.assign(params.size(), 0.0);
    moments.v.assign(params.size(), 0.0);
    moments.step = 0;
  }
  if (moments.m.size() != params.size())
    throw std::invalid_argument("adam: moment size mismatch");
  ++moments.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(moments.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(moments.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    moments.m[i] = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * grads[i];
    moments.v[i] = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = moments.m[i] / bc1;
    const double v_hat = moments.v[i] / bc2;
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

void apply_adam(ModelState& state, const LossGradient& grad,
                AdamMoments& moments, const AdamConfig& cfg) {
  std::vector<double> params(state.weights);
  params.push_back(state.log_temperature);
  std::vector<double> grads(grad.grad_weights);
  grads.push_back(grad.grad_temperature * state.temperature());
  adam_step(params, grads, moments, cfg);
  std::copy(params.begin(), params.end() - 1, state.weights.begin());
  state.log_temperature = params.back();
}

double diffuse_epe(const SceneSample& sample, const Image& disparity) {
  double sum = 0.0;
  long n = 0;
  for (int y = 0; y < sample.height(); ++y) {
    for (int x = 0; x < sample.width(); ++x) {
      if (sample.label(x, y) != Material::kDiffuse) continue;
      const double gt = sample.gt_disparity.at(x, y);
      if (!is_valid(gt)) continue;
      sum += std::abs(disparity.at(x, y) - gt);
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

PretrainResult pretrain(ModelState init, std::span<const SceneSample> train,
                        std::span<const SceneSample> validation,
                        const DisparityHypotheses& hyps,
                        const PretrainConfig& cfg) {
  init.validate();
  if (train.empty()) throw std::invalid_argument("pretrain needs training scenes");
  for (const auto& s : train) {
    for (const auto& o : s.objects)
      if (o.material == Material::kTransparent)
        throw std::invalid_argument("pretraining scenes must be diffuse-only");
  }
  PretrainResult result;
  result.state = std::move(init);
  std::vector<StereoFeatures> train_features;
  std::vector<Objective> objectives;
  for (const auto& s : train) {
    train_features.push_back(compute_features(s, result.state.descriptor));
    objectives.push_back(dense_smooth_l1_objective(s.gt_disparity, cfg.smooth_l1_beta));
  }
  std::vector<StereoFeatures> val_features;
  for (const auto& s : validation)
    val_features.push_back(compute_features(s, result.state.descriptor));
  auto validation_epe = [&] {
    const auto& samples = validation.empty() ? train : validation;
    const auto& feats = validation.empty() ? train_features : val_features;
    double total = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i)
      total += diffuse_epe(samples[i], infer(feats[i], result.state, hyps).disparity);
    return total / static_cast<double>(samples.size());
  };

  AdamMoments moments;
  EvalOptions options{cfg.threads};
  result.validation_epe = validation_epe();
  result.reached_target = result.validation_epe < cfg.target_epe;
  for (int epoch = 0; epoch < cfg.max_epochs && !result.reached_target; ++epoch) {
    double epoch_loss = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const LossGradient g = loss_gradients(result.state, train_features[i], hyps,
                                            objectives[i], options);
      epoch_loss += g.loss;
      apply_adam(result.state, g, moments, cfg.adam);
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    result.epochs_run = epoch + 1;
    result.validation_epe = validation_epe();
    result.reached_target = result.validation_epe < cfg.target_epe;
  }
  result.state.role = ModelRole::kPretrained;
  return result;
}

namespace {

constexpr char kModelMagic[8] = {'T', 'S', 'M', 'O', 'D', 'E', 'L', '\0'};
constexpr std::uint32_t kModelVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (bytes.size() - pos < sizeof(T))
    throw ParseError("truncated model file", bytes.size());
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

std::string encode_model(const ModelState& state) {
  state.validate();
  std::string out(kModelMagic, sizeof kModelMagic);
  put<std::uint32_t>(out, kModelVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(state.embed_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(state.feature_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(state.descriptor.patch_radius));
  put<std::uint8_t>(out, state.descriptor.normalize ? 1 : 0);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(state.role));
  put<std::uint16_t>(out, 0);
  put<double>(out, state.log_temperature);
  for (double w : state.weights) put<double>(out, w);
  return out;
}

ModelState decode_model(std::string_view bytes) {
  if (bytes.size() < sizeof kModelMagic ||
      std::memcmp(bytes.data(), kModelMagic, sizeof kModelMagic) != 0)
    throw ParseError("bad model magic", 0);
  std::size_t pos = sizeof kModelMagic;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kModelVersion)
    throw ParseError("unsupported model version " + std::to_string(version), pos - 4);
  ModelState s;
  s.embed_dim = static_cast<int>(take<std::uint32_t>(bytes, pos));
  s.feature_dim = static_cast<int>(take<std::uint32_t>(bytes, pos));
  s.descriptor.patch_radius = static_cast<int>(take<std::uint32_t>(bytes, pos));
  s.descriptor.normalize = take<std::uint8_t>(bytes, pos) != 0;
  const auto role = take<std::uint8_t>(bytes, pos);
  if (role > static_cast<std::uint8_t>(ModelRole::kFinetuned))
    throw ParseError("bad role tag", pos - 1);
  s.role = static_cast<ModelRole>(role);
  take<std::uint16_t>(bytes, pos);
  s.log_temperature = take<double>(bytes, pos);
  if (s.embed_dim <= 0 || s.feature_dim != s.descriptor.dim() || s.embed_dim > 4096)
    throw ParseError("inconsistent model dimensions", pos);
  s.weights.resize(static_cast<std::size_t>(s.embed_dim) * s.feature_dim);
  for (double& w : s.weights) w = take<double>(bytes, pos);
  if (pos != bytes.size()) throw ParseError("trailing bytes in model file", pos);
  return s;
}

void save_model(const std::filesystem::path& path, const ModelState& state) {
  write_file(path, encode_model(state));
  std::ostringstream side;
  side.precision(17);
  side << "format_version=" << kModelVersion << "\n"
       << "role=" << role_name(state.role) << "\n"
       << "embed_dim=" << state.embed_dim << "\n"
       << "feature_dim=" << state.feature_dim << "\n"
       << "patch_radius=" << state.descriptor.patch_radius << "\n"
       << "normalize=" << (state.descriptor.normalize ? 1 : 0) << "\n"
       << "temperature=" << state.temperature() << "\n";
  write_file(path.string() + ".txt", side.str());
}

ModelState load_model(const std::filesystem::path& path) {
  return decode_model(read_file(path));
}

}  // namespace tstereo
