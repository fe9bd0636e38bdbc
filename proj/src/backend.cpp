#include "revsam/backend.hpp"

#include <bit>
#include <string>

namespace revsam {

std::string to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::BadMagic: return "BAD_MAGIC";
    case ErrorCode::BadShape: return "BAD_SHAPE";
    case ErrorCode::UnknownOp: return "UNKNOWN_OP";
    case ErrorCode::State: return "STATE";
  }
  return "STATE";
}

ErrorCode error_code_from_string(const std::string& s) {
  if (s == "BAD_MAGIC") return ErrorCode::BadMagic;
  if (s == "BAD_SHAPE") return ErrorCode::BadShape;
  if (s == "UNKNOWN_OP") return ErrorCode::UnknownOp;
  return ErrorCode::State;
}

// ---- ToyBackend ----

void ToyBackend::init(const BackboneConfig& cfg) {
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw BackendError(ErrorCode::State, std::string("rejected config: ") + e.what());
  }
  cfg_ = cfg;
  initialized_ = true;
  grid_rows_ = grid_cols_ = 0;
  entries_.clear();
}

void ToyBackend::require_init(const char* op) const {
  if (!initialized_) throw BackendError(ErrorCode::State, std::string(op) + " before INIT");
}

void ToyBackend::check_grid(Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (grid_rows_ == 0) {
    grid_rows_ = rows;
    grid_cols_ = cols;
    return;
  }
  if (rows != grid_rows_ || cols != grid_cols_) {
    throw BackendError(ErrorCode::BadShape,
                       std::string(what) + " grid " + std::to_string(rows) + "x" +
                           std::to_string(cols) + " differs from session grid " +
                           std::to_string(grid_rows_) + "x" + std::to_string(grid_cols_));
  }
}

FeatureGrid ToyBackend::encode_image(const Image& slice) {
  require_init("ENCODE_IMAGE");
  try {
    auto g = revsam::encode_image(slice, cfg_);
    check_grid(g.grid_rows, g.grid_cols, "image");
    return g;
  } catch (const ShapeError& e) {
    throw BackendError(ErrorCode::BadShape, e.what());
  }
}

PromptGrid ToyBackend::encode_prompt(const Mask& mask) {
  require_init("ENCODE_PROMPT");
  try {
    auto g = revsam::encode_prompt(mask, cfg_);
    check_grid(g.grid_rows, g.grid_cols, "prompt");
    return g;
  } catch (const ShapeError& e) {
    throw BackendError(ErrorCode::BadShape, e.what());
  } catch (const std::invalid_argument& e) {
    throw BackendError(ErrorCode::BadShape, e.what());
  }
}

MemoryId ToyBackend::encode_memory(const FeatureGrid& img, const PromptGrid& prompt,
                                   MemoryKind kind) {
  require_init("ENCODE_MEMORY");
  if (img.dim() != cfg_.feat_dim) {
    throw BackendError(ErrorCode::BadShape, "feature width " + std::to_string(img.dim()) +
                                                " != negotiated " + std::to_string(cfg_.feat_dim));
  }
  try {
    check_grid(img.grid_rows, img.grid_cols, "memory");
    entries_.push_back(revsam::encode_memory(img, prompt, kind));
  } catch (const ShapeError& e) {
    throw BackendError(ErrorCode::BadShape, e.what());
  }
  return MemoryId{static_cast<std::uint32_t>(entries_.size() - 1)};
}

const MemoryEntry& ToyBackend::entry(MemoryId id) const {
  if (id.value >= entries_.size()) {
    throw BackendError(ErrorCode::State, "unknown memory id " + std::to_string(id.value));
  }
  return entries_[id.value];
}

ProbabilityGrid ToyBackend::attend(const FeatureGrid& query, std::span<const MemoryId> memory) {
  require_init("ATTEND");
  if (memory.empty()) throw BackendError(ErrorCode::State, "ATTEND with empty memory list");
  std::vector<const MemoryEntry*> entries;
  entries.reserve(memory.size());
  for (auto id : memory) entries.push_back(&entry(id));
  if (query.dim() != cfg_.feat_dim) {
    throw BackendError(ErrorCode::BadShape, "query feature width " + std::to_string(query.dim()) +
                                                " != negotiated " + std::to_string(cfg_.feat_dim));
  }
  try {
    check_grid(query.grid_rows, query.grid_cols, "query");
    return memory_attention(query, std::span<const MemoryEntry* const>(entries), cfg_);
  } catch (const ShapeError& e) {
    throw BackendError(ErrorCode::BadShape, e.what());
  }
}

Mask ToyBackend::decode(const ProbabilityGrid& probs, std::size_t rows, std::size_t cols) {
  require_init("DECODE");
  try {
    return decode_mask(probs, rows, cols, cfg_).mask;
  } catch (const ShapeError& e) {
    throw BackendError(ErrorCode::BadShape, e.what());
  }
}

void ToyBackend::reset() {
  require_init("RESET");
  entries_.clear();
  grid_rows_ = grid_cols_ = 0;
}

// ---- OracleBackend ----

namespace {

std::size_t hash_image(const Image& image) {
  std::size_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  mix(std::uint64_t(image.rows()));
  mix(std::uint64_t(image.cols()));
  for (Eigen::Index i = 0; i < image.size(); ++i) mix(std::bit_cast<std::uint32_t>(image.data()[i]));
  return h;
}

}  // namespace

void OracleBackend::add(const Image& image, const Mask& truth) {
  if (image.rows() != truth.rows() || image.cols() != truth.cols()) {
    throw ShapeError("oracle image and mask shapes differ");
  }
  truths_.push_back(truth);
  index_.emplace(hash_image(image), std::make_pair(image, truths_.size() - 1));
}

void OracleBackend::add(const IntensityVolume& images, const MaskVolume& truth) {
  if (!(images.shape() == truth.shape())) throw ShapeError("oracle volume and mask shapes differ");
  for (std::size_t i = 0; i < images.num_slices(); ++i) add(images.slice(i), truth.slice(i));
}

void OracleBackend::add(const SupportSet& support) {
  for (std::size_t i = 0; i < support.size(); ++i) add(support.images[i], support.masks[i]);
}

std::size_t OracleBackend::lookup(const Image& image) const {
  auto [lo, hi] = index_.equal_range(hash_image(image));
  for (auto it = lo; it != hi; ++it) {
    const auto& candidate = it->second.first;
    if (candidate.rows() == image.rows() && candidate.cols() == image.cols() &&
        (candidate == image).all()) {
      return it->second.second;
    }
  }
  throw BackendError(ErrorCode::State, "oracle has no ground truth for this image");
}

void OracleBackend::init(const BackboneConfig&) {
  initialized_ = true;
  next_id_ = 0;
}

// The oracle's "features" are a single cell holding the registry index.
FeatureGrid OracleBackend::encode_image(const Image& slice) {
  if (!initialized_) throw BackendError(ErrorCode::State, "ENCODE_IMAGE before INIT");
  FeatureGrid g;
  g.grid_rows = g.grid_cols = 1;
  g.features.resize(1, 1);
  g.features(0, 0) = static_cast<float>(lookup(slice));
  return g;
}

PromptGrid OracleBackend::encode_prompt(const Mask&) {
  if (!initialized_) throw BackendError(ErrorCode::State, "ENCODE_PROMPT before INIT");
  PromptGrid g;
  g.grid_rows = g.grid_cols = 1;
  g.values = Eigen::ArrayXf::Zero(1);
  return g;
}

MemoryId OracleBackend::encode_memory(const FeatureGrid&, const PromptGrid&, MemoryKind) {
  if (!initialized_) throw BackendError(ErrorCode::State, "ENCODE_MEMORY before INIT");
  return MemoryId{next_id_++};
}

ProbabilityGrid OracleBackend::attend(const FeatureGrid& query, std::span<const MemoryId> memory) {
  if (!initialized_) throw BackendError(ErrorCode::State, "ATTEND before INIT");
  if (memory.empty()) throw BackendError(ErrorCode::State, "ATTEND with empty memory list");
  ProbabilityGrid g;
  g.grid_rows = g.grid_cols = 1;
  g.values = Eigen::ArrayXf::Constant(1, query.features(0, 0));
  return g;
}

Mask OracleBackend::decode(const ProbabilityGrid& probs, std::size_t rows, std::size_t cols) {
  if (!initialized_) throw BackendError(ErrorCode::State, "DECODE before INIT");
  const auto idx = static_cast<std::size_t>(probs.values(0));
  if (idx >= truths_.size()) throw BackendError(ErrorCode::State, "oracle index out of range");
  const Mask& m = truths_[idx];
  if (std::size_t(m.rows()) != rows || std::size_t(m.cols()) != cols) {
    throw BackendError(ErrorCode::BadShape, "oracle truth shape mismatch");
  }
  return m;
}

void OracleBackend::reset() { next_id_ = 0; }

}  // namespace revsam
