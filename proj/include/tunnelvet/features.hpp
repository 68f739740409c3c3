#pragma once

// Per-name payload features: label entropy statistics, character statistics
// and the longest-meaningful-substring ratio, combined into a bounded
// suspicion score by per-feature logistic units.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "tunnelvet/dns.hpp"

namespace tunnelvet::features {

class EmptyLabelError : public std::invalid_argument {
 public:
  EmptyLabelError() : std::invalid_argument("entropy of an empty label") {}
};

class DictionaryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Word list for meaningful-substring matching. Lookup is case-insensitive
// exact match; words shorter than kMinWordLength are dropped on load since
// 1-2 character hits carry no signal.
class Dictionary {
 public:
  static constexpr std::size_t kMinWordLength = 3;

  Dictionary() = default;

  static Dictionary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
      throw DictionaryError("cannot open dictionary: " + path.string());
    Dictionary d;
    std::string line;
    while (std::getline(in, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ' ||
                               line.back() == '\t'))
        line.pop_back();
      std::size_t start = line.find_first_not_of(" \t");
      if (start == std::string::npos) continue;
      d.insert(line.substr(start));
    }
    return d;
  }

  static Dictionary from_words(const std::vector<std::string>& words) {
    Dictionary d;
    for (const auto& w : words) d.insert(w);
    return d;
  }

  bool contains(std::string_view lowered) const {
    return words_.count(std::string(lowered)) > 0;
  }

  bool empty() const { return words_.empty(); }
  std::size_t size() const { return words_.size(); }
  std::size_t max_word_length() const { return max_word_length_; }

  std::vector<std::string> sorted_words() const {
    std::vector<std::string> out(words_.begin(), words_.end());
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  void insert(std::string word) {
    for (char& c : word) c = dns::ascii_lower(c);
    if (word.size() < kMinWordLength) return;
    max_word_length_ = std::max(max_word_length_, word.size());
    words_.insert(std::move(word));
  }

  std::unordered_set<std::string> words_;
  std::size_t max_word_length_ = 0;
};

struct NameFeatures {
  std::size_t total_length = 0;      // presentation octets, no trailing dot
  std::size_t label_count = 0;
  std::size_t max_label_length = 0;
  double entropy_max = 0.0;
  double entropy_min = 0.0;
  double entropy_mean = 0.0;
  double entropy_median = 0.0;
  double entropy_variance = 0.0;
  double digit_fraction = 0.0;       // over non-dot characters
  std::size_t unique_char_count = 0; // over non-dot characters, case-folded
  double lms_fraction = 0.0;
};

enum class Feature : std::size_t {
  TotalLength = 0,
  LabelCount,
  MaxLabelLength,
  EntropyMax,
  EntropyMin,
  EntropyMean,
  EntropyMedian,
  EntropyVariance,
  DigitFraction,
  UniqueCharCount,
  LmsFraction,
};

inline constexpr std::size_t kFeatureCount = 11;

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "total_length",   "label_count",      "max_label_length",
    "entropy_max",    "entropy_min",      "entropy_mean",
    "entropy_median", "entropy_variance", "digit_fraction",
    "unique_char_count", "lms_fraction"};

inline double feature_value(const NameFeatures& f, Feature which) {
  switch (which) {
    case Feature::TotalLength: return static_cast<double>(f.total_length);
    case Feature::LabelCount: return static_cast<double>(f.label_count);
    case Feature::MaxLabelLength: return static_cast<double>(f.max_label_length);
    case Feature::EntropyMax: return f.entropy_max;
    case Feature::EntropyMin: return f.entropy_min;
    case Feature::EntropyMean: return f.entropy_mean;
    case Feature::EntropyMedian: return f.entropy_median;
    case Feature::EntropyVariance: return f.entropy_variance;
    case Feature::DigitFraction: return f.digit_fraction;
    case Feature::UniqueCharCount: return static_cast<double>(f.unique_char_count);
    case Feature::LmsFraction: return f.lms_fraction;
  }
  return 0.0;
}

// One logistic squashing unit: 1 / (1 + exp(-(x - midpoint) / scale)).
struct LogisticUnit {
  double weight = 0.0;
  double midpoint = 0.0;
  double scale = 1.0;
};

struct ScoreWeights {
  std::array<LogisticUnit, kFeatureCount> units{};
  double score_threshold = 0.5;
  double cache_hit_bonus = 0.15;

  LogisticUnit& unit(Feature f) { return units[static_cast<std::size_t>(f)]; }
  const LogisticUnit& unit(Feature f) const {
    return units[static_cast<std::size_t>(f)];
  }

  void validate() const {
    for (const auto& u : units) {
      if (!std::isfinite(u.weight) || !std::isfinite(u.midpoint) ||
          !std::isfinite(u.scale))
        throw std::invalid_argument("score weights must be finite");
      if (u.weight < 0.0)
        throw std::invalid_argument("feature weights must be >= 0");
      if (u.scale <= 0.0)
        throw std::invalid_argument("logistic scales must be > 0");
    }
    if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
      throw std::invalid_argument("score_threshold must be in [0,1]");
    if (!(cache_hit_bonus >= 0.0) || !std::isfinite(cache_hit_bonus))
      throw std::invalid_argument("cache_hit_bonus must be >= 0");
  }
};

// Shannon entropy in bits over byte frequencies, ASCII case folded.
inline double shannon_entropy(std::string_view label) {
  if (label.empty()) throw EmptyLabelError();
  std::array<std::size_t, 256> counts{};
  for (char c : label)
    ++counts[static_cast<unsigned char>(dns::ascii_lower(c))];
  double h = 0.0;
  double n = static_cast<double>(label.size());
  for (std::size_t count : counts) {
    if (count == 0) continue;
    double p = static_cast<double>(count) / n;
    h -= p * std::log2(p);
  }
  return h;
}

struct EntropyStats {
  double max = 0.0;
  double min = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double variance = 0.0;  // population variance
};

inline EntropyStats entropy_stats(const dns::DomainName& name) {
  if (name.is_root())
    throw std::invalid_argument("entropy_stats requires at least one label");
  std::vector<double> h;
  h.reserve(name.label_count());
  for (const auto& label : name.labels()) h.push_back(shannon_entropy(label));
  std::sort(h.begin(), h.end());
  EntropyStats s;
  s.min = h.front();
  s.max = h.back();
  double sum = 0.0;
  for (double v : h) sum += v;
  s.mean = sum / static_cast<double>(h.size());
  std::size_t mid = h.size() / 2;
  s.median = (h.size() % 2) ? h[mid] : (h[mid - 1] + h[mid]) / 2.0;
  double ss = 0.0;
  for (double v : h) ss += (v - s.mean) * (v - s.mean);
  s.variance = ss / static_cast<double>(h.size());
  return s;
}

struct CharStats {
  double digit_fraction = 0.0;
  std::size_t unique_char_count = 0;
};

inline CharStats char_stats(const dns::DomainName& name) {
  if (name.is_root())
    throw std::invalid_argument("char_stats requires at least one label");
  std::array<bool, 256> seen{};
  std::size_t digits = 0;
  std::size_t total = 0;
  for (const auto& label : name.labels()) {
    for (char c : label) {
      unsigned char folded = static_cast<unsigned char>(dns::ascii_lower(c));
      seen[folded] = true;
      if (folded >= '0' && folded <= '9') ++digits;
      ++total;
    }
  }
  CharStats s;
  s.digit_fraction = static_cast<double>(digits) / static_cast<double>(total);
  for (bool b : seen) s.unique_char_count += b ? 1 : 0;
  return s;
}

// Longest contiguous dictionary-word substring per label, as a fraction of
// that label's length; the name's value is the max over its labels.
inline double lms_fraction(const dns::DomainName& name,
                           const Dictionary& dictionary) {
  if (name.is_root())
    throw std::invalid_argument("lms_fraction requires at least one label");
  double best = 0.0;
  for (const auto& label : name.labels()) {
    std::string folded = dns::ascii_lower_copy(label);
    std::size_t longest = 0;
    std::size_t cap = std::min(folded.size(), dictionary.max_word_length());
    for (std::size_t len = cap;
         len >= Dictionary::kMinWordLength && longest == 0; --len) {
      for (std::size_t start = 0; start + len <= folded.size(); ++start) {
        if (dictionary.contains(std::string_view(folded).substr(start, len))) {
          longest = len;
          break;
        }
      }
    }
    if (longest > 0)
      best = std::max(best, static_cast<double>(longest) /
                                static_cast<double>(folded.size()));
  }
  return best;
}

inline NameFeatures extract_features(const dns::DomainName& name,
                                     const Dictionary& dictionary) {
  NameFeatures f;
  f.total_length = name.presentation_length();
  f.label_count = name.label_count();
  for (const auto& label : name.labels())
    f.max_label_length = std::max(f.max_label_length, label.size());
  auto es = entropy_stats(name);
  f.entropy_max = es.max;
  f.entropy_min = es.min;
  f.entropy_mean = es.mean;
  f.entropy_median = es.median;
  f.entropy_variance = es.variance;
  auto cs = char_stats(name);
  f.digit_fraction = cs.digit_fraction;
  f.unique_char_count = cs.unique_char_count;
  f.lms_fraction = lms_fraction(name, dictionary);
  return f;
}

// Weight-normalized convex combination of logistic units. lms_fraction
// enters negated: meaningful text lowers suspicion.
inline double suspicion_score(const NameFeatures& f, const ScoreWeights& w) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    const LogisticUnit& u = w.units[i];
    if (u.weight == 0.0) continue;
    double x = feature_value(f, static_cast<Feature>(i));
    if (static_cast<Feature>(i) == Feature::LmsFraction) x = -x;
    double unit = 1.0 / (1.0 + std::exp(-(x - u.midpoint) / u.scale));
    num += u.weight * unit;
    den += u.weight;
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace tunnelvet::features
