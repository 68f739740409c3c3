#pragma once

// Secure/insecure verdicts for query domains. Evaluation order is fixed:
// blacklist, whitelist-with-pattern, zone uniformity, then the feature
// score with an optional cache-hit bonus.

#include <algorithm>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tunnelvet/dns.hpp"
#include "tunnelvet/features.hpp"
#include "tunnelvet/registry.hpp"
#include "tunnelvet/uniformity.hpp"

namespace tunnelvet::classifier {

enum class Decision { Secure, Insecure };

enum class Reason {
  Whitelisted,
  Blacklisted,
  UniformZone,
  ScoreAboveThreshold,
  ScoreBelowThreshold,
};

inline std::string_view to_string(Decision d) {
  return d == Decision::Secure ? "Secure" : "Insecure";
}

inline std::string_view to_string(Reason r) {
  switch (r) {
    case Reason::Whitelisted: return "Whitelisted";
    case Reason::Blacklisted: return "Blacklisted";
    case Reason::UniformZone: return "UniformZone";
    case Reason::ScoreAboveThreshold: return "ScoreAboveThreshold";
    case Reason::ScoreBelowThreshold: return "ScoreBelowThreshold";
  }
  return "?";
}

inline Decision decision_from_string(std::string_view s) {
  if (s == "Secure") return Decision::Secure;
  if (s == "Insecure") return Decision::Insecure;
  throw std::invalid_argument("unknown decision: " + std::string(s));
}

inline Reason reason_from_string(std::string_view s) {
  if (s == "Whitelisted") return Reason::Whitelisted;
  if (s == "Blacklisted") return Reason::Blacklisted;
  if (s == "UniformZone") return Reason::UniformZone;
  if (s == "ScoreAboveThreshold") return Reason::ScoreAboveThreshold;
  if (s == "ScoreBelowThreshold") return Reason::ScoreBelowThreshold;
  throw std::invalid_argument("unknown reason: " + std::string(s));
}

struct Verdict {
  Decision decision = Decision::Secure;
  Reason reason = Reason::ScoreBelowThreshold;
  std::optional<double> score;  // present iff the feature path ran

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

struct ClassifierConfig {
  features::ScoreWeights weights;
  std::uint64_t uniformity_min_samples = 20;
  double uniformity_threshold = 0.95;
  std::size_t zone_depth = 2;
  std::filesystem::path dictionary_path;

  void validate() const {
    weights.validate();
    if (!(uniformity_threshold > 0.0 && uniformity_threshold <= 1.0))
      throw std::invalid_argument("uniformity_threshold must be in (0,1]");
    if (zone_depth < 1)
      throw std::invalid_argument("zone_depth must be >= 1");
  }
};

class Classifier {
 public:
  Classifier(ClassifierConfig cfg, features::Dictionary dictionary)
      : cfg_(std::move(cfg)), dictionary_(std::move(dictionary)) {
    cfg_.validate();
  }

  const ClassifierConfig& config() const { return cfg_; }
  const features::Dictionary& dictionary() const { return dictionary_; }

  Verdict classify(const dns::DomainName& qname,
                   const registry::Registry& reg,
                   const uniformity::UniformityTracker& zones,
                   bool cache_probe) const {
    if (reg.blacklist_contains(qname))
      return {Decision::Insecure, Reason::Blacklisted, std::nullopt};
    if (auto hit = reg.lookup_whitelist(qname); hit && hit->matched)
      return {Decision::Secure, Reason::Whitelisted, std::nullopt};
    return classify_heuristic(qname, zones, cache_probe);
  }

  // Rules (3)-(4) only: zone uniformity, then the feature score. This is
  // the splitter-mode view, which has no registry.
  Verdict classify_heuristic(const dns::DomainName& qname,
                             const uniformity::UniformityTracker& zones,
                             bool cache_probe) const {
    auto zone = uniformity::ZoneKey::of(qname, cfg_.zone_depth);
    if (auto v = zones.try_uniformity(zone);
        v && v->samples >= cfg_.uniformity_min_samples &&
        v->dominant_fraction >= cfg_.uniformity_threshold)
      return {Decision::Insecure, Reason::UniformZone, std::nullopt};

    auto f = features::extract_features(qname, dictionary_);
    double raw = features::suspicion_score(f, cfg_.weights);
    double effective =
        cache_probe ? std::max(0.0, raw - cfg_.weights.cache_hit_bonus) : raw;
    if (effective > cfg_.weights.score_threshold)
      return {Decision::Insecure, Reason::ScoreAboveThreshold, effective};
    return {Decision::Secure, Reason::ScoreBelowThreshold, effective};
  }

  // Feature path alone, no state: what the offline evaluator scores with.
  double raw_score(const dns::DomainName& qname) const {
    return features::suspicion_score(
        features::extract_features(qname, dictionary_), cfg_.weights);
  }

  std::vector<Verdict> classify_batch(
      std::span<const dns::DomainName> names, const registry::Registry& reg,
      const uniformity::UniformityTracker& zones,
      bool cache_probe = false) const {
    std::vector<Verdict> out;
    out.reserve(names.size());
    for (const auto& name : names)
      out.push_back(classify(name, reg, zones, cache_probe));
    return out;
  }

 private:
  ClassifierConfig cfg_;
  features::Dictionary dictionary_;
};

}  // namespace tunnelvet::classifier
