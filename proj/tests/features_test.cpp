#include "tunnelvet/features.hpp"

#include <gtest/gtest.h>

#include <random>

#include "support/oracles.hpp"
#include "tunnelvet/dns.hpp"

using namespace tunnelvet;
using namespace tunnelvet::features;
using tunnelvet::dns::parse_name;

namespace {

Dictionary shipped_dictionary() {
  static Dictionary d = Dictionary::load(TV_DATA_DIR "/dictionary.txt");
  return d;
}

TEST(ShannonEntropy, KnownValues) {
  EXPECT_DOUBLE_EQ(shannon_entropy("aaaa"), 0.0);
  EXPECT_DOUBLE_EQ(shannon_entropy("abab"), 1.0);
  EXPECT_DOUBLE_EQ(shannon_entropy("abcd"), 2.0);
}

TEST(ShannonEntropy, EmptyLabelThrows) {
  EXPECT_THROW(shannon_entropy(""), EmptyLabelError);
}

TEST(ShannonEntropy, ExactlyLog2KForEqualFrequencies) {
  // k equally frequent symbols, repeated to length 32.
  const std::string alphabet = "abcdefghijklmnop";
  for (std::size_t k : {1u, 2u, 4u, 8u, 16u}) {
    std::string label;
    for (std::size_t i = 0; i < 32; ++i) label.push_back(alphabet[i % k]);
    EXPECT_DOUBLE_EQ(shannon_entropy(label), std::log2(double(k)))
        << "k=" << k;
  }
}

TEST(ShannonEntropy, CaseFoldsBeforeCounting) {
  EXPECT_DOUBLE_EQ(shannon_entropy("AbAb"), 1.0);
  EXPECT_DOUBLE_EQ(shannon_entropy("aAaA"), 0.0);
}

TEST(ShannonEntropy, BoundedByLog2OfLength) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    std::string label;
    std::size_t len = 1 + rng() % 63;
    for (std::size_t j = 0; j < len; ++j)
      label.push_back(static_cast<char>('!' + rng() % 90));
    double h = shannon_entropy(label);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log2(double(len)) + 1e-12);
  }
}

TEST(EntropyStats, SingleLabel) {
  auto s = entropy_stats(parse_name("abcd"));
  EXPECT_DOUBLE_EQ(s.max, 2.0);
  EXPECT_DOUBLE_EQ(s.min, 2.0);
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.median, 2.0);
  EXPECT_DOUBLE_EQ(s.variance, 0.0);
}

TEST(EntropyStats, TwoLabelsHandComputed) {
  // "aaaa" -> 0 bits, "abab" -> 1 bit; population variance of {0,1} = 0.25.
  auto s = entropy_stats(parse_name("aaaa.abab"));
  EXPECT_DOUBLE_EQ(s.max, 1.0);
  EXPECT_DOUBLE_EQ(s.min, 0.0);
  EXPECT_DOUBLE_EQ(s.mean, 0.5);
  EXPECT_DOUBLE_EQ(s.median, 0.5);
  EXPECT_DOUBLE_EQ(s.variance, 0.25);
}

TEST(EntropyStats, LabelPermutationInvariant) {
  auto a = entropy_stats(parse_name("aaaa.abab.xyz.q"));
  auto b = entropy_stats(parse_name("q.xyz.abab.aaaa"));
  EXPECT_DOUBLE_EQ(a.max, b.max);
  EXPECT_DOUBLE_EQ(a.min, b.min);
  EXPECT_DOUBLE_EQ(a.mean, b.mean);
  EXPECT_DOUBLE_EQ(a.median, b.median);
  EXPECT_DOUBLE_EQ(a.variance, b.variance);
}

TEST(CharStats, HandCounted) {
  // "abc123com": 3 digits over 9 chars; distinct set {a,b,c,1,2,3,o,m}.
  auto s = char_stats(parse_name("abc123.com"));
  EXPECT_DOUBLE_EQ(s.digit_fraction, 3.0 / 9.0);
  EXPECT_EQ(s.unique_char_count, 8u);
}

TEST(CharStats, NoDigits) {
  auto s = char_stats(parse_name("aabbcc"));
  EXPECT_DOUBLE_EQ(s.digit_fraction, 0.0);
  EXPECT_EQ(s.unique_char_count, 3u);
}

TEST(CharStats, AllDigits) {
  auto s = char_stats(parse_name("111111"));
  EXPECT_DOUBLE_EQ(s.digit_fraction, 1.0);
  EXPECT_EQ(s.unique_char_count, 1u);
}

TEST(LmsFraction, PartialWordInLabel) {
  auto dict = Dictionary::from_words({"secure", "mail"});
  EXPECT_DOUBLE_EQ(lms_fraction(parse_name("secure7payload"), dict),
                   6.0 / 14.0);
}

TEST(LmsFraction, NoWordPresent) {
  EXPECT_DOUBLE_EQ(lms_fraction(parse_name("zzqqxx"), shipped_dictionary()),
                   0.0);
}

TEST(LmsFraction, WholeLabelIsWord) {
  auto dict = Dictionary::from_words({"mail"});
  EXPECT_DOUBLE_EQ(lms_fraction(parse_name("mail"), dict), 1.0);
}

TEST(LmsFraction, CaseInsensitive) {
  auto dict = Dictionary::from_words({"secure"});
  EXPECT_DOUBLE_EQ(lms_fraction(parse_name("SECUREdata"), dict), 6.0 / 10.0);
}

TEST(LmsFraction, MatchesBruteForceOracle) {
  auto dict = shipped_dictionary();
  std::mt19937_64 rng(99);
  const std::string chars = "abcdefghijklmnopqrstuvwxyz0123456789";
  for (int i = 0; i < 300; ++i) {
    std::vector<std::string> labels;
    int nl = 1 + int(rng() % 3);
    for (int j = 0; j < nl; ++j) {
      std::string l;
      std::size_t len = 1 + rng() % 20;
      for (std::size_t k = 0; k < len; ++k)
        l.push_back(chars[rng() % chars.size()]);
      labels.push_back(l);
    }
    auto name = dns::DomainName::from_labels(labels);
    auto oracle = tvtest::recompute_features(name, dict);
    EXPECT_NEAR(lms_fraction(name, dict), oracle.lms_fraction, 1e-12);
  }
}

TEST(ExtractFeatures, ExampleCom) {
  auto f = extract_features(parse_name("example.com"), shipped_dictionary());
  EXPECT_EQ(f.label_count, 2u);
  EXPECT_EQ(f.max_label_length, 7u);
  EXPECT_DOUBLE_EQ(f.digit_fraction, 0.0);
  EXPECT_DOUBLE_EQ(f.lms_fraction, 1.0);  // "example" is a dictionary word
  EXPECT_EQ(f.total_length, 11u);
}

TEST(ExtractFeatures, SingleCharName) {
  auto f = extract_features(parse_name("a"), shipped_dictionary());
  EXPECT_EQ(f.total_length, 1u);
  EXPECT_EQ(f.unique_char_count, 1u);
  EXPECT_DOUBLE_EQ(f.entropy_max, 0.0);
  EXPECT_DOUBLE_EQ(f.entropy_min, 0.0);
  EXPECT_DOUBLE_EQ(f.entropy_mean, 0.0);
  EXPECT_DOUBLE_EQ(f.entropy_variance, 0.0);
}

TEST(ExtractFeatures, AgreesWithOracleOnRandomNames) {
  auto dict = shipped_dictionary();
  std::mt19937_64 rng(424242);
  const std::string chars = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_";
  for (int i = 0; i < 250; ++i) {
    std::vector<std::string> labels;
    int nl = 1 + int(rng() % 5);
    for (int j = 0; j < nl; ++j) {
      std::string l;
      std::size_t len = 1 + rng() % 40;
      for (std::size_t k = 0; k < len; ++k)
        l.push_back(chars[rng() % chars.size()]);
      labels.push_back(l);
    }
    auto name = dns::DomainName::from_labels(labels);
    auto f = extract_features(name, dict);
    auto o = tvtest::recompute_features(name, dict);
    EXPECT_NEAR(double(f.total_length), o.total_length, 1e-9);
    EXPECT_NEAR(double(f.label_count), o.label_count, 1e-9);
    EXPECT_NEAR(double(f.max_label_length), o.max_label_length, 1e-9);
    EXPECT_NEAR(f.entropy_max, o.entropy_max, 1e-9);
    EXPECT_NEAR(f.entropy_min, o.entropy_min, 1e-9);
    EXPECT_NEAR(f.entropy_mean, o.entropy_mean, 1e-9);
    EXPECT_NEAR(f.entropy_median, o.entropy_median, 1e-9);
    EXPECT_NEAR(f.entropy_variance, o.entropy_variance, 1e-9);
    EXPECT_NEAR(f.digit_fraction, o.digit_fraction, 1e-9);
    EXPECT_NEAR(double(f.unique_char_count), o.unique_char_count, 1e-9);
    EXPECT_NEAR(f.lms_fraction, o.lms_fraction, 1e-9);
    // Structural invariants.
    EXPECT_LE(f.entropy_min, f.entropy_median);
    EXPECT_LE(f.entropy_median, f.entropy_max);
    EXPECT_GE(f.entropy_variance, 0.0);
    EXPECT_LE(f.unique_char_count, f.total_length - (f.label_count - 1));
  }
}

ScoreWeights single_unit(Feature which, double mid, double scale) {
  ScoreWeights w;
  w.unit(which) = {1.0, mid, scale};
  return w;
}

TEST(SuspicionScore, SaturatedSingleUnit) {
  auto w = single_unit(Feature::TotalLength, 40.0, 5.0);
  NameFeatures f;
  f.total_length = 200;  // far above midpoint
  double s = suspicion_score(f, w);
  EXPECT_GT(s, 0.999);
  EXPECT_LE(s, 1.0);
}

TEST(SuspicionScore, ZeroWeightsGiveZero) {
  NameFeatures f;
  f.total_length = 100;
  EXPECT_DOUBLE_EQ(suspicion_score(f, ScoreWeights{}), 0.0);
}

TEST(SuspicionScore, BoundedAndDeterministic) {
  auto dict = shipped_dictionary();
  ScoreWeights w;
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    w.units[i] = {1.0, 2.0, 1.5};
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    std::string label;
    std::size_t len = 1 + rng() % 60;
    for (std::size_t k = 0; k < len; ++k)
      label.push_back(static_cast<char>('a' + rng() % 26));
    auto f = extract_features(dns::DomainName::from_labels({label}), dict);
    double s1 = suspicion_score(f, w);
    double s2 = suspicion_score(f, w);
    EXPECT_EQ(s1, s2);
    EXPECT_GE(s1, 0.0);
    EXPECT_LE(s1, 1.0);
  }
}

TEST(SuspicionScore, MonotoneInPositivelyWeightedFeatures) {
  ScoreWeights w;
  for (std::size_t i = 0; i < kFeatureCount; ++i) w.units[i] = {0.7, 3.0, 2.0};
  NameFeatures base;
  base.total_length = 30;
  base.label_count = 3;
  base.max_label_length = 12;
  base.entropy_max = 3.0;
  base.entropy_min = 1.0;
  base.entropy_mean = 2.0;
  base.entropy_median = 2.0;
  base.entropy_variance = 0.5;
  base.digit_fraction = 0.2;
  base.unique_char_count = 10;
  base.lms_fraction = 0.5;
  double s0 = suspicion_score(base, w);

  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    NameFeatures bumped = base;
    switch (static_cast<Feature>(i)) {
      case Feature::TotalLength: bumped.total_length += 20; break;
      case Feature::LabelCount: bumped.label_count += 2; break;
      case Feature::MaxLabelLength: bumped.max_label_length += 20; break;
      case Feature::EntropyMax: bumped.entropy_max += 1.0; break;
      case Feature::EntropyMin: bumped.entropy_min += 1.0; break;
      case Feature::EntropyMean: bumped.entropy_mean += 1.0; break;
      case Feature::EntropyMedian: bumped.entropy_median += 1.0; break;
      case Feature::EntropyVariance: bumped.entropy_variance += 1.0; break;
      case Feature::DigitFraction: bumped.digit_fraction += 0.3; break;
      case Feature::UniqueCharCount: bumped.unique_char_count += 10; break;
      case Feature::LmsFraction: bumped.lms_fraction += 0.4; break;
    }
    double s1 = suspicion_score(bumped, w);
    if (static_cast<Feature>(i) == Feature::LmsFraction)
      EXPECT_LE(s1, s0) << kFeatureNames[i];
    else
      EXPECT_GE(s1, s0) << kFeatureNames[i];
  }
}

TEST(ScoreWeights, ValidationRejectsBadConfigs) {
  ScoreWeights w;
  w.validate();
  w.score_threshold = 1.5;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w.score_threshold = 0.5;
  w.units[0].scale = 0.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
  w.units[0].scale = 1.0;
  w.units[0].weight = -1.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
}

TEST(Dictionary, LoadSkipsCommentsAndShortWords) {
  auto dict = shipped_dictionary();
  EXPECT_GT(dict.size(), 400u);
  EXPECT_TRUE(dict.contains("example"));
  EXPECT_TRUE(dict.contains("mail"));
  EXPECT_FALSE(dict.contains("zz"));
  auto tiny = Dictionary::from_words({"ab", "abc"});
  EXPECT_EQ(tiny.size(), 1u);  // "ab" dropped, below minimum length
}

}  // namespace
