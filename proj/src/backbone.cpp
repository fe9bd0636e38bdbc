#include "revsam/backbone.hpp"

#include "revsam/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace revsam {

void BackboneConfig::validate() const {
  if (patch < 1) throw ConfigError("patch must be >= 1");
  if (feat_dim < 3) throw ConfigError("feat_dim must be >= 3 (two channels are positional)");
  if (!(temperature > 0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be > 0");
  }
  if (!(lambda_pos >= 0) || !std::isfinite(lambda_pos)) {
    throw ConfigError("lambda_pos must be >= 0");
  }
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must lie in (0,1)");
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = nlohmann::json{{"patch", c.patch},           {"feat_dim", c.feat_dim},
                     {"temperature", c.temperature}, {"lambda_pos", c.lambda_pos},
                     {"threshold", c.threshold},     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
  reject_unknown_keys(j, {"patch", "feat_dim", "temperature", "lambda_pos", "threshold", "seed"},
                      "backbone config");
  BackboneConfig out;
  read_optional(j, "patch", out.patch);
  read_optional(j, "feat_dim", out.feat_dim);
  read_optional(j, "temperature", out.temperature);
  read_optional(j, "lambda_pos", out.lambda_pos);
  read_optional(j, "threshold", out.threshold);
  read_optional(j, "seed", out.seed);
  out.validate();
  c = out;
}

std::string to_string(MemoryKind k) {
  switch (k) {
    case MemoryKind::Support: return "support";
    case MemoryKind::Conditional: return "conditional";
    case MemoryKind::Recent: return "recent";
  }
  return "unknown";
}

MemoryKind memory_kind_from_string(const std::string& s) {
  if (s == "support") return MemoryKind::Support;
  if (s == "conditional") return MemoryKind::Conditional;
  if (s == "recent") return MemoryKind::Recent;
  throw std::invalid_argument("unknown memory kind '" + s + "'");
}

Eigen::MatrixXf appearance_projection(const BackboneConfig& cfg) {
  const int out_dim = cfg.feat_dim - 2;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(out_dim)));
  Eigen::MatrixXf p(out_dim, 3);
  for (int r = 0; r < out_dim; ++r) {
    for (int c = 0; c < 3; ++c) p(r, c) = static_cast<float>(normal(rng));
  }
  return p;
}

namespace {

void check_divisible(Eigen::Index rows, Eigen::Index cols, int patch) {
  if (patch < 1 || rows % patch != 0 || cols % patch != 0 || rows == 0 || cols == 0) {
    throw ShapeError("slice (H=" + std::to_string(rows) + ", W=" + std::to_string(cols) +
                     ") is not divisible by patch " + std::to_string(patch));
  }
}

// Central differences, edge voxels replicated.
Eigen::ArrayXXd gradient_magnitude(const Eigen::Ref<const Image>& s) {
  const Eigen::Index h = s.rows(), w = s.cols();
  Eigen::ArrayXXd g(h, w);
  for (Eigen::Index r = 0; r < h; ++r) {
    const Eigen::Index rp = std::min(r + 1, h - 1), rm = std::max<Eigen::Index>(r - 1, 0);
    for (Eigen::Index c = 0; c < w; ++c) {
      const Eigen::Index cp = std::min(c + 1, w - 1), cm = std::max<Eigen::Index>(c - 1, 0);
      const double gy = 0.5 * (double(s(rp, c)) - double(s(rm, c)));
      const double gx = 0.5 * (double(s(r, cp)) - double(s(r, cm)));
      g(r, c) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return g;
}

void check_same_grid(const FeatureGrid& q, const FeatureGrid& k) {
  if (q.grid_rows != k.grid_rows || q.grid_cols != k.grid_cols || q.dim() != k.dim()) {
    throw ShapeError("memory grid " + std::to_string(k.grid_rows) + "x" +
                     std::to_string(k.grid_cols) + "x" + std::to_string(k.dim()) +
                     " does not match query grid " + std::to_string(q.grid_rows) + "x" +
                     std::to_string(q.grid_cols) + "x" + std::to_string(q.dim()));
  }
}

}  // namespace

FeatureGrid encode_image(const Eigen::Ref<const Image>& slice, const BackboneConfig& cfg) {
  cfg.validate();
  check_divisible(slice.rows(), slice.cols(), cfg.patch);
  const int p = cfg.patch;
  const Eigen::Index gh = slice.rows() / p, gw = slice.cols() / p;
  const Eigen::MatrixXf proj = appearance_projection(cfg);
  const Eigen::ArrayXXd grad = gradient_magnitude(slice);
  const double n = double(p) * double(p);

  FeatureGrid out;
  out.grid_rows = gh;
  out.grid_cols = gw;
  out.features.resize(gh * gw, cfg.feat_dim);
  for (Eigen::Index gr = 0; gr < gh; ++gr) {
    for (Eigen::Index gc = 0; gc < gw; ++gc) {
      const auto block = slice.block(gr * p, gc * p, p, p).cast<double>();
      const double mean = block.sum() / n;
      const double var = std::max(0.0, (block - mean).square().sum() / n);
      const double mgrad = grad.block(gr * p, gc * p, p, p).sum() / n;
      const Eigen::Vector3f stats(float(mean), float(std::sqrt(var)), float(mgrad));

      const Eigen::Index cell = gr * gw + gc;
      out.features.row(cell).head(cfg.feat_dim - 2) = (proj * stats).transpose();
      out.features(cell, cfg.feat_dim - 2) = float(double(gr) / double(gh) * cfg.lambda_pos);
      out.features(cell, cfg.feat_dim - 1) = float(double(gc) / double(gw) * cfg.lambda_pos);
    }
  }
  return out;
}

PromptGrid encode_prompt(const Eigen::Ref<const Mask>& mask, const BackboneConfig& cfg) {
  cfg.validate();
  if (!is_binary(mask)) throw std::invalid_argument("prompt mask must be binary (0/1)");
  check_divisible(mask.rows(), mask.cols(), cfg.patch);
  const int p = cfg.patch;
  PromptGrid out;
  out.grid_rows = mask.rows() / p;
  out.grid_cols = mask.cols() / p;
  out.values.resize(out.cells());
  for (Eigen::Index gr = 0; gr < out.grid_rows; ++gr) {
    for (Eigen::Index gc = 0; gc < out.grid_cols; ++gc) {
      const auto count = mask.block(gr * p, gc * p, p, p).cast<int>().sum();
      out.values(gr * out.grid_cols + gc) = float(double(count) / (double(p) * double(p)));
    }
  }
  return out;
}

MemoryEntry encode_memory(FeatureGrid img, PromptGrid prompt, MemoryKind kind) {
  if (img.grid_rows != prompt.grid_rows || img.grid_cols != prompt.grid_cols ||
      prompt.values.size() != img.cells() || img.features.rows() != img.cells()) {
    throw ShapeError("image grid " + std::to_string(img.grid_rows) + "x" +
                     std::to_string(img.grid_cols) + " and prompt grid " +
                     std::to_string(prompt.grid_rows) + "x" + std::to_string(prompt.grid_cols) +
                     " differ");
  }
  return MemoryEntry{std::move(img), std::move(prompt), kind};
}

namespace {

// Squared distances turned into softmax logits, one row per query cell.
RowMatrixXd attention_logits(const FeatureGrid& query, std::span<const MemoryEntry* const> memory,
                             const BackboneConfig& cfg) {
  if (memory.empty()) throw std::invalid_argument("memory attention needs at least one entry");
  Eigen::Index total = 0;
  for (const auto* m : memory) {
    check_same_grid(query, m->keys);
    total += m->keys.cells();
  }
  RowMatrixXd keys(total, query.dim());
  Eigen::Index at = 0;
  for (const auto* m : memory) {
    keys.middleRows(at, m->keys.cells()) = m->keys.features.cast<double>();
    at += m->keys.cells();
  }

  // ||q - k||^2 = ||q||^2 + ||k||^2 - 2 q.k, evaluated in double.
  const RowMatrixXd q = query.features.cast<double>();
  const Eigen::VectorXd qn = q.rowwise().squaredNorm();
  const Eigen::RowVectorXd kn = keys.rowwise().squaredNorm().transpose();
  RowMatrixXd logits(q.rows(), total);
  logits.noalias() = -2.0 * (q * keys.transpose());
  const double inv_t = 1.0 / cfg.temperature;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    logits.row(r).array() =
        -((logits.row(r).array() + kn.array() + qn(r)).max(0.0) * inv_t);
  }
  return logits;
}

// exp(x) for x <= 0. Below the cutoff the double result is exactly zero anyway,
// and with sharp temperatures most entries land there, so skipping them is free.
inline double exp_nonpos(double x) { return x < -746.0 ? 0.0 : std::exp(x); }

}  // namespace

RowMatrixXd attention_weights(const FeatureGrid& query,
                                  std::span<const MemoryEntry* const> memory,
                                  const BackboneConfig& cfg) {
  RowMatrixXd w = attention_logits(query, memory, cfg);
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    const double top = w.row(r).maxCoeff();
    double sum = 0;
    for (Eigen::Index c = 0; c < w.cols(); ++c) sum += (w(r, c) = exp_nonpos(w(r, c) - top));
    w.row(r) /= sum;
  }
  return w;
}

RowMatrixXd attention_weights(const FeatureGrid& query, std::span<const MemoryEntry> memory,
                                  const BackboneConfig& cfg) {
  std::vector<const MemoryEntry*> ptrs;
  ptrs.reserve(memory.size());
  for (const auto& m : memory) ptrs.push_back(&m);
  return attention_weights(query, std::span<const MemoryEntry* const>(ptrs), cfg);
}

ProbabilityGrid memory_attention(const FeatureGrid& query,
                                 std::span<const MemoryEntry* const> memory,
                                 const BackboneConfig& cfg) {
  const RowMatrixXd logits = attention_logits(query, memory, cfg);
  Eigen::VectorXd values(logits.cols());
  Eigen::Index at = 0;
  for (const auto* m : memory) {
    values.segment(at, m->values.cells()) = m->values.values.cast<double>().matrix();
    at += m->values.cells();
  }
  ProbabilityGrid out;
  out.grid_rows = query.grid_rows;
  out.grid_cols = query.grid_cols;
  out.values.resize(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double top = logits.row(r).maxCoeff();
    double sum = 0, acc = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double w = exp_nonpos(logits(r, c) - top);
      sum += w;
      acc += w * values(c);
    }
    // Convex combination; the clamp only absorbs rounding at the ends of [0,1].
    out.values(r) = std::clamp(float(acc / sum), 0.0f, 1.0f);
  }
  return out;
}

ProbabilityGrid memory_attention(const FeatureGrid& query, std::span<const MemoryEntry> memory,
                                 const BackboneConfig& cfg) {
  std::vector<const MemoryEntry*> ptrs;
  ptrs.reserve(memory.size());
  for (const auto& m : memory) ptrs.push_back(&m);
  return memory_attention(query, std::span<const MemoryEntry* const>(ptrs), cfg);
}

Decoded decode_mask(const ProbabilityGrid& probs, std::size_t rows, std::size_t cols,
                    const BackboneConfig& cfg) {
  cfg.validate();
  const auto p = std::size_t(cfg.patch);
  if (std::size_t(probs.grid_rows) * p != rows || std::size_t(probs.grid_cols) * p != cols ||
      probs.values.size() != probs.cells()) {
    throw ShapeError("probability grid " + std::to_string(probs.grid_rows) + "x" +
                     std::to_string(probs.grid_cols) + " with patch " + std::to_string(p) +
                     " cannot decode to " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  Decoded out;
  out.soft.resize(Eigen::Index(rows), Eigen::Index(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out.soft(Eigen::Index(r), Eigen::Index(c)) = probs.at(Eigen::Index(r / p), Eigen::Index(c / p));
    }
  }
  out.mask = (out.soft >= float(cfg.threshold)).cast<std::uint8_t>();
  return out;
}

}  // namespace revsam
