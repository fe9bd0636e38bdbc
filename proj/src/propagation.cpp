#include "revsam/propagation.hpp"

#include "revsam/json_util.hpp"
#include "revsam/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

namespace revsam {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::ForwardFifo: return "forward_fifo";
    case Variant::RandomSelect: return "random_select";
    case Variant::RevProp: return "revprop";
  }
  return "revprop";
}

Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::Baseline;
  if (s == "forward_fifo") return Variant::ForwardFifo;
  if (s == "random_select") return Variant::RandomSelect;
  if (s == "revprop") return Variant::RevProp;
  throw ConfigError("unknown variant '" + s +
                    "' (expected baseline, forward_fifo, random_select or revprop)");
}

void PipelineConfig::validate() const {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (tau < 1) throw ConfigError("tau must be >= 1");
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = nlohmann::json{{"k", c.k},
                     {"tau", c.tau},
                     {"variant", to_string(c.variant)},
                     {"random_seed", c.random_seed}};
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  reject_unknown_keys(j, {"k", "tau", "variant", "random_seed"}, "pipeline config");
  PipelineConfig out;
  read_optional(j, "k", out.k);
  read_optional(j, "tau", out.tau);
  if (j.contains("variant")) out.variant = variant_from_string(j.at("variant").get<std::string>());
  read_optional(j, "random_seed", out.random_seed);
  out.validate();
  c = out;
}

// ---- MemoryBank ----

MemoryBank::MemoryBank(std::size_t tau) : tau_(tau) {
  if (tau_ < 1) throw std::invalid_argument("FIFO capacity must be >= 1");
}

std::optional<MemoryId> MemoryBank::push_recent(MemoryId id) {
  std::optional<MemoryId> evicted;
  if (fifo_.size() == tau_) {
    evicted = fifo_.front();
    fifo_.pop_front();
  }
  fifo_.push_back(id);
  return evicted;
}

std::vector<MemoryId> MemoryBank::attention_list() const {
  std::vector<MemoryId> ids(permanent_);
  ids.insert(ids.end(), fifo_.begin(), fifo_.end());
  return ids;
}

// ---- stages ----

namespace {

void check_support_against(const SupportSet& support, const IntensityVolume& query) {
  support.validate();
  for (std::size_t n = 0; n < support.size(); ++n) {
    if (std::size_t(support.images[n].rows()) != query.rows() ||
        std::size_t(support.images[n].cols()) != query.cols()) {
      throw ShapeError("support slice " + std::to_string(n) + " is " +
                       std::to_string(support.images[n].rows()) + "x" +
                       std::to_string(support.images[n].cols()) + ", query slices are " +
                       std::to_string(query.rows()) + "x" + std::to_string(query.cols()));
    }
  }
}

MaskVolume stack_masks(const std::vector<Mask>& masks) { return MaskVolume::stack(masks); }

// One ascending pass over the non-frozen slices with a FIFO of recent predictions.
MaskVolume sweep(const IntensityVolume& query, const std::vector<MemoryId>& permanent,
                 const std::vector<std::optional<Mask>>& frozen, Backend& backend,
                 std::size_t tau) {
  MemoryBank bank(tau);
  for (auto id : permanent) bank.add_permanent(id);

  MaskVolume out(query.shape());
  for (std::size_t j = 0; j < query.num_slices(); ++j) {
    if (frozen[j]) {
      out.set_slice(j, *frozen[j]);
      continue;
    }
    const Image slice = query.slice(j);
    const FeatureGrid z = backend.encode_image(slice);
    const auto ids = bank.attention_list();
    const ProbabilityGrid probs = backend.attend(z, ids);
    const Mask mask = backend.decode(probs, query.rows(), query.cols());
    out.set_slice(j, mask);
    const PromptGrid prompt = backend.encode_prompt(mask);
    bank.push_recent(backend.encode_memory(z, prompt, MemoryKind::Recent));
  }
  return out;
}

}  // namespace

void SupportSet::validate() const {
  if (images.empty()) throw std::invalid_argument("support set is empty");
  if (images.size() != masks.size()) {
    throw std::invalid_argument("support set has " + std::to_string(images.size()) +
                                " images but " + std::to_string(masks.size()) + " masks");
  }
  bool any_fg = false;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].rows() != masks[i].rows() || images[i].cols() != masks[i].cols() ||
        images[i].rows() != images[0].rows() || images[i].cols() != images[0].cols()) {
      throw ShapeError("support pair " + std::to_string(i) + " has mismatched shapes");
    }
    if (!is_binary(masks[i])) {
      throw std::invalid_argument("support mask " + std::to_string(i) + " is not binary");
    }
    any_fg = any_fg || (masks[i] != 0).any();
  }
  if (!any_fg) throw std::invalid_argument("support set has no foreground voxel");
}

EncodedSupport encode_support(const SupportSet& support, Backend& backend) {
  support.validate();
  EncodedSupport enc;
  for (std::size_t n = 0; n < support.size(); ++n) {
    enc.features.push_back(backend.encode_image(support.images[n]));
    const PromptGrid prompt = backend.encode_prompt(support.masks[n]);
    enc.memory.push_back(backend.encode_memory(enc.features.back(), prompt, MemoryKind::Support));
  }
  return enc;
}

std::vector<ScoredPrediction> forward_propagate(const EncodedSupport& encoded,
                                                const IntensityVolume& query, Backend& backend) {
  if (encoded.memory.empty()) throw std::invalid_argument("forward propagation needs supports");
  std::vector<ScoredPrediction> out;
  out.reserve(query.num_slices());
  for (std::size_t i = 0; i < query.num_slices(); ++i) {
    const FeatureGrid z = backend.encode_image(query.slice(i));
    const ProbabilityGrid probs = backend.attend(z, encoded.memory);
    out.push_back(
        ScoredPrediction{i, backend.decode(probs, query.rows(), query.cols()), std::nullopt});
  }
  return out;
}

std::vector<ScoredPrediction> forward_propagate(const SupportSet& support,
                                                const IntensityVolume& query, Backend& backend) {
  check_support_against(support, query);
  return forward_propagate(encode_support(support, backend), query, backend);
}

double reverse_score(const SupportSet& support, const EncodedSupport& encoded, const Image& slice,
                     const Mask& prediction, Backend& backend) {
  if (slice.rows() != prediction.rows() || slice.cols() != prediction.cols()) {
    throw ShapeError("reverse_score: slice and prediction shapes differ");
  }
  const FeatureGrid z = backend.encode_image(slice);
  const PromptGrid prompt = backend.encode_prompt(prediction);
  const MemoryId pair = backend.encode_memory(z, prompt, MemoryKind::Support);
  const std::vector<MemoryId> memory{pair};

  std::vector<Mask> reversed;
  reversed.reserve(support.size());
  for (std::size_t n = 0; n < support.size(); ++n) {
    const ProbabilityGrid probs = backend.attend(encoded.features[n], memory);
    reversed.push_back(backend.decode(probs, std::size_t(support.masks[n].rows()),
                                      std::size_t(support.masks[n].cols())));
  }
  return avg_dice(reversed, support.masks);
}

double reverse_score(const SupportSet& support, const Image& slice, const Mask& prediction,
                     Backend& backend) {
  support.validate();
  EncodedSupport enc;
  for (const auto& img : support.images) enc.features.push_back(backend.encode_image(img));
  return reverse_score(support, enc, slice, prediction, backend);
}

std::vector<std::size_t> select_conditional(std::span<const ScoredPrediction> scored,
                                            std::size_t k) {
  if (scored.empty()) throw std::invalid_argument("select_conditional: no predictions");
  std::vector<std::size_t> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  auto score = [&](std::size_t i) { return scored[i].score.value_or(0.0); };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score(a) != score(b)) return score(a) > score(b);
    return scored[a].index < scored[b].index;
  });
  order.resize(std::min(k, order.size()));
  for (auto& i : order) i = scored[i].index;
  return order;
}

MaskVolume self_propagate(const IntensityVolume& query, const ConditionalSlices& conditional,
                          Backend& backend, std::size_t tau) {
  if (conditional.indices.empty()) {
    throw std::invalid_argument("self_propagate needs at least one conditional slice");
  }
  if (conditional.indices.size() != conditional.masks.size()) {
    throw std::invalid_argument("conditional indices and masks differ in count");
  }
  std::vector<std::optional<Mask>> frozen(query.num_slices());
  for (std::size_t c = 0; c < conditional.indices.size(); ++c) {
    const auto idx = conditional.indices[c];
    const Mask& m = conditional.masks[c];
    if (idx >= query.num_slices()) {
      throw std::out_of_range("conditional index " + std::to_string(idx) + " outside volume");
    }
    if (frozen[idx]) throw std::invalid_argument("duplicate conditional index " + std::to_string(idx));
    if (std::size_t(m.rows()) != query.rows() || std::size_t(m.cols()) != query.cols()) {
      throw ShapeError("conditional mask " + std::to_string(idx) + " has the wrong shape");
    }
    if (!is_binary(m)) throw std::invalid_argument("conditional mask must be binary");
    frozen[idx] = m;
  }

  std::vector<MemoryId> permanent;
  for (std::size_t c = 0; c < conditional.indices.size(); ++c) {
    const FeatureGrid z = backend.encode_image(query.slice(conditional.indices[c]));
    const PromptGrid p = backend.encode_prompt(conditional.masks[c]);
    permanent.push_back(backend.encode_memory(z, p, MemoryKind::Conditional));
  }
  return sweep(query, permanent, frozen, backend, tau);
}

PipelineResult run_variant(Variant variant, const SupportSet& support,
                           const IntensityVolume& query, Backend& backend,
                           const PipelineConfig& cfg) {
  cfg.validate();
  check_support_against(support, query);
  const auto start = std::chrono::steady_clock::now();
  backend.reset();

  PipelineResult res;
  res.variant = variant;
  const EncodedSupport enc = encode_support(support, backend);

  if (variant == Variant::ForwardFifo) {
    // Supports act as the conditional entries; every query slice goes through the FIFO.
    std::vector<std::optional<Mask>> none(query.num_slices());
    res.prediction = sweep(query, enc.memory, none, backend, cfg.tau);
  } else {
    res.forward = forward_propagate(enc, query, backend);
    if (variant == Variant::Baseline) {
      std::vector<Mask> masks;
      for (const auto& p : res.forward) masks.push_back(p.mask);
      res.prediction = stack_masks(masks);
    } else {
      if (variant == Variant::RevProp) {
        for (auto& p : res.forward) {
          p.score = reverse_score(support, enc, query.slice(p.index), p.mask, backend);
        }
        res.selected = select_conditional(res.forward, cfg.k);
      } else {
        std::vector<std::size_t> all(query.num_slices());
        std::iota(all.begin(), all.end(), 0);
        std::mt19937_64 rng(cfg.random_seed);
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(std::min(cfg.k, all.size()));
        res.selected = all;
      }
      ConditionalSlices cond;
      cond.indices = res.selected;
      for (auto i : res.selected) cond.masks.push_back(res.forward[i].mask);
      res.prediction = self_propagate(query, cond, backend, cfg.tau);
    }
  }
  res.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

PipelineResult run_pipeline(const SupportSet& support, const IntensityVolume& query,
                            Backend& backend, const PipelineConfig& cfg) {
  return run_variant(Variant::RevProp, support, query, backend, cfg);
}

PipelineReport make_report(const PipelineResult& result, const nlohmann::json& config_echo,
                           const MaskVolume* truth, double nsd_tol) {
  PipelineReport rep;
  rep.variant = result.variant;
  rep.config = config_echo;
  rep.seconds = result.seconds;
  if (result.variant == Variant::RandomSelect || result.variant == Variant::RevProp) {
    rep.selected = result.selected;
  }
  if (truth && !(truth->shape() == result.prediction.shape())) {
    throw ShapeError("ground truth " + to_string(truth->shape()) + " does not match prediction " +
                     to_string(result.prediction.shape()));
  }
  for (std::size_t i = 0; i < result.prediction.num_slices(); ++i) {
    SliceReport s;
    s.index = i;
    if (i < result.forward.size()) s.score = result.forward[i].score;
    if (truth) {
      const Mask gt = truth->slice(i);
      if (i < result.forward.size()) s.forward_dice = dice(result.forward[i].mask, gt);
      s.final_dice = dice(result.prediction.slice(i), gt);
    }
    rep.slices.push_back(s);
  }
  if (truth) {
    rep.final_dice = dice(result.prediction, *truth);
    rep.final_nsd = nsd(result.prediction, *truth, nsd_tol);
  }
  return rep;
}

void to_json(nlohmann::json& j, const PipelineReport& r) {
  j = nlohmann::json::object();
  j["variant"] = to_string(r.variant);
  j["config"] = r.config;
  j["seconds"] = r.seconds;
  auto& slices = j["slices"] = nlohmann::json::array();
  for (const auto& s : r.slices) {
    nlohmann::json e{{"index", s.index}};
    e["score"] = s.score ? nlohmann::json(*s.score) : nlohmann::json(nullptr);
    if (s.forward_dice) e["forward_dice"] = *s.forward_dice;
    if (s.final_dice) e["final_dice"] = *s.final_dice;
    slices.push_back(e);
  }
  if (r.selected) j["selected"] = *r.selected;
  if (r.final_dice) j["final_dice"] = *r.final_dice;
  if (r.final_nsd) j["final_nsd"] = *r.final_nsd;
}

void write_slice_csv(std::ostream& os, const PipelineReport& r) {
  const auto flags = os.flags();
  os << std::setprecision(17);
  os << "index,score,forward_dice,final_dice\n";
  auto opt = [&os](const std::optional<double>& v) {
    if (v) os << *v;
  };
  for (const auto& s : r.slices) {
    os << s.index << ',';
    opt(s.score);
    os << ',';
    opt(s.forward_dice);
    os << ',';
    opt(s.final_dice);
    os << '\n';
  }
  os.flags(flags);
}

}  // namespace revsam
