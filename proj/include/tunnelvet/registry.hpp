#pragma once

// The tunnel domain registry: pattern-carrying whitelist entries, a
// suffix-matched blacklist, and the invalidation path that atomically moves
// a misbehaving registered domain from one to the other. Blacklist outranks
// whitelist everywhere.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tunnelvet/dns.hpp"

namespace tunnelvet::registry {

class RegistryError : public std::runtime_error {
 public:
  enum class Kind { AlreadyRegistered, DomainBlacklisted, NotRegistered };

  RegistryError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedRecordError : public std::runtime_error {
 public:
  MalformedRecordError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class Alphabet { Base32, Base64Url, Hex, Alphanumeric, Custom };

inline std::string_view alphabet_chars(Alphabet a) {
  switch (a) {
    case Alphabet::Base32: return "abcdefghijklmnopqrstuvwxyz234567";
    case Alphabet::Base64Url:
      return "abcdefghijklmnopqrstuvwxyz0123456789-_";
    case Alphabet::Hex: return "0123456789abcdef";
    case Alphabet::Alphanumeric: return "abcdefghijklmnopqrstuvwxyz0123456789";
    case Alphabet::Custom: return {};
  }
  return {};
}

// How a registrant generates encoded names under its suffix: a character
// class plus length and label-count bounds. Matching case-folds first, so
// base64url collapses onto its lowercase half the way DNS transport does.
struct TunnelPattern {
  Alphabet alphabet = Alphabet::Base32;
  std::string custom_set;  // folded; Custom only
  int max_label_length = 63;
  int max_total_length = 255;
  int label_count_min = 1;
  int label_count_max = 4;

  void validate() const {
    if (max_label_length < 1 || max_label_length > 63)
      throw std::invalid_argument("max_label_length must be in 1..63");
    if (max_total_length < 1 || max_total_length > 255)
      throw std::invalid_argument("max_total_length must be in 1..255");
    if (label_count_min < 0 || label_count_max < label_count_min)
      throw std::invalid_argument("label count range must satisfy 0 <= min <= max");
    if (alphabet == Alphabet::Custom && custom_set.empty())
      throw std::invalid_argument("custom alphabet needs a character set");
  }

  bool allows_char(char c) const {
    char folded = dns::ascii_lower(c);
    std::string_view set =
        alphabet == Alphabet::Custom ? custom_set : alphabet_chars(alphabet);
    return set.find(folded) != std::string_view::npos;
  }

  friend bool operator==(const TunnelPattern&, const TunnelPattern&) = default;
};

// True iff the encoded labels preceding the registered suffix satisfy the
// pattern and the whole name stays within the pattern's total length.
inline bool matches_pattern(std::span<const std::string> prefix_labels,
                            const TunnelPattern& pattern,
                            std::size_t total_name_length) {
  auto n = static_cast<int>(prefix_labels.size());
  if (n < pattern.label_count_min || n > pattern.label_count_max) return false;
  if (total_name_length > static_cast<std::size_t>(pattern.max_total_length))
    return false;
  for (const auto& label : prefix_labels) {
    if (label.size() > static_cast<std::size_t>(pattern.max_label_length))
      return false;
    for (char c : label)
      if (!pattern.allows_char(c)) return false;
  }
  return true;
}

enum class EntryStatus { Active, Invalidated };
enum class Provenance { Imported, Invalidated, Detected };

struct RegistryEntry {
  dns::DomainName domain;  // registered suffix, >= 2 labels
  TunnelPattern pattern;
  std::string registrant;
  EntryStatus status = EntryStatus::Active;
  std::int64_t created = 0;  // unix seconds
  std::int64_t updated = 0;

  friend bool operator==(const RegistryEntry&, const RegistryEntry&) = default;
};

struct BlacklistItem {
  dns::DomainName domain;
  Provenance provenance = Provenance::Imported;
  std::int64_t created = 0;
  std::int64_t updated = 0;

  friend bool operator==(const BlacklistItem&, const BlacklistItem&) = default;
};

struct WhitelistHit {
  RegistryEntry entry;
  bool matched = false;
};

namespace detail {

inline std::string alphabet_to_string(const TunnelPattern& p) {
  switch (p.alphabet) {
    case Alphabet::Base32: return "base32";
    case Alphabet::Base64Url: return "base64url";
    case Alphabet::Hex: return "hex";
    case Alphabet::Alphanumeric: return "alphanumeric";
    case Alphabet::Custom: return "custom:" + p.custom_set;
  }
  return "base32";
}

inline void alphabet_from_string(TunnelPattern& p, const std::string& s) {
  if (s == "base32") {
    p.alphabet = Alphabet::Base32;
  } else if (s == "base64url") {
    p.alphabet = Alphabet::Base64Url;
  } else if (s == "hex") {
    p.alphabet = Alphabet::Hex;
  } else if (s == "alphanumeric") {
    p.alphabet = Alphabet::Alphanumeric;
  } else if (s.rfind("custom:", 0) == 0) {
    p.alphabet = Alphabet::Custom;
    p.custom_set = dns::ascii_lower_copy(s.substr(7));
  } else {
    throw std::invalid_argument("unknown alphabet: " + s);
  }
}

inline std::string provenance_to_string(Provenance p) {
  switch (p) {
    case Provenance::Imported: return "imported";
    case Provenance::Invalidated: return "invalidated";
    case Provenance::Detected: return "detected";
  }
  return "imported";
}

inline Provenance provenance_from_string(const std::string& s) {
  if (s == "imported") return Provenance::Imported;
  if (s == "invalidated") return Provenance::Invalidated;
  if (s == "detected") return Provenance::Detected;
  throw std::invalid_argument("unknown provenance: " + s);
}

}  // namespace detail

class Registry {
 public:
  Registry() = default;

  Registry(const Registry& other) {
    std::shared_lock lock(other.mutex_);
    entries_ = other.entries_;
    blacklist_ = other.blacklist_;
  }

  Registry& operator=(const Registry& other) {
    if (this == &other) return *this;
    Registry copy(other);
    std::unique_lock lock(mutex_);
    entries_ = std::move(copy.entries_);
    blacklist_ = std::move(copy.blacklist_);
    return *this;
  }

  RegistryEntry register_domain(const dns::DomainName& domain,
                                const TunnelPattern& pattern,
                                std::string registrant, std::int64_t now) {
    pattern.validate();
    if (domain.label_count() < 2)
      throw std::invalid_argument("registered domains need at least 2 labels");
    std::unique_lock lock(mutex_);
    if (blacklist_hit(domain))
      throw RegistryError(RegistryError::Kind::DomainBlacklisted,
                          domain.to_text() + " is blacklisted");
    auto it = entries_.find(domain.canonical());
    if (it != entries_.end() && it->second.status == EntryStatus::Active)
      throw RegistryError(RegistryError::Kind::AlreadyRegistered,
                          domain.to_text() + " already has an active entry");
    RegistryEntry entry{domain, pattern, std::move(registrant),
                        EntryStatus::Active, now, now};
    entries_[domain.canonical()] = entry;
    return entry;
  }

  // Longest registered active suffix of qname, with its pattern verdict for
  // the remaining prefix labels.
  std::optional<WhitelistHit> lookup_whitelist(
      const dns::DomainName& qname) const {
    std::shared_lock lock(mutex_);
    const auto& labels = qname.labels();
    for (std::size_t k = labels.size(); k >= 2; --k) {
      auto it = entries_.find(qname.suffix(k).canonical());
      if (it == entries_.end() || it->second.status != EntryStatus::Active)
        continue;
      std::span<const std::string> prefix(labels.data(), labels.size() - k);
      bool matched = matches_pattern(prefix, it->second.pattern,
                                     qname.presentation_length());
      return WhitelistHit{it->second, matched};
    }
    return std::nullopt;
  }

  // Flips the entry to invalidated and blacklists the domain under one
  // lock: no reader can observe the domain as neither listed.
  void invalidate(const dns::DomainName& domain, std::int64_t now) {
    std::unique_lock lock(mutex_);
    auto it = entries_.find(domain.canonical());
    if (it == entries_.end() || it->second.status != EntryStatus::Active)
      throw RegistryError(RegistryError::Kind::NotRegistered,
                          domain.to_text() + " has no active entry");
    it->second.status = EntryStatus::Invalidated;
    it->second.updated = now;
    blacklist_.emplace(domain.canonical(),
                       BlacklistItem{domain, Provenance::Invalidated, now, now});
  }

  void blacklist_add(const dns::DomainName& domain, Provenance provenance,
                     std::int64_t now) {
    std::unique_lock lock(mutex_);
    blacklist_.emplace(domain.canonical(),
                       BlacklistItem{domain, provenance, now, now});
  }

  bool blacklist_contains(const dns::DomainName& qname) const {
    std::shared_lock lock(mutex_);
    return blacklist_hit(qname);
  }

  // Plain-text import, one domain per line, '#' comments. Returns the
  // number of new suffixes.
  std::size_t import_blacklist(const std::filesystem::path& path,
                               std::int64_t now) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open blacklist file: " + path.string());
    std::unique_lock lock(mutex_);
    std::size_t added = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::size_t begin = line.find_first_not_of(" \t\r");
      if (begin == std::string::npos) continue;
      std::size_t end = line.find_last_not_of(" \t\r");
      std::string text = line.substr(begin, end - begin + 1);
      dns::DomainName domain;
      try {
        domain = dns::parse_name(text);
      } catch (const dns::NameError& e) {
        throw MalformedRecordError(lineno, e.what());
      }
      if (blacklist_
              .emplace(domain.canonical(),
                       BlacklistItem{domain, Provenance::Imported, now, now})
              .second)
        ++added;
    }
    return added;
  }

  std::vector<RegistryEntry> entries() const {
    std::shared_lock lock(mutex_);
    std::vector<RegistryEntry> out;
    out.reserve(entries_.size());
    for (const auto& [key, e] : entries_) out.push_back(e);
    return out;
  }

  std::vector<BlacklistItem> blacklist() const {
    std::shared_lock lock(mutex_);
    std::vector<BlacklistItem> out;
    out.reserve(blacklist_.size());
    for (const auto& [key, b] : blacklist_) out.push_back(b);
    return out;
  }

  std::string to_jsonl() const {
    std::shared_lock lock(mutex_);
    std::ostringstream out;
    for (const auto& [key, e] : entries_) {
      nlohmann::json j;
      j["kind"] = "entry";
      j["domain"] = e.domain.to_text();
      j["pattern"] = {{"alphabet", detail::alphabet_to_string(e.pattern)},
                      {"max_label_length", e.pattern.max_label_length},
                      {"max_total_length", e.pattern.max_total_length},
                      {"label_count_min", e.pattern.label_count_min},
                      {"label_count_max", e.pattern.label_count_max}};
      j["registrant"] = e.registrant;
      j["status"] = e.status == EntryStatus::Active ? "active" : "invalidated";
      j["created"] = e.created;
      j["updated"] = e.updated;
      out << j.dump() << '\n';
    }
    for (const auto& [key, b] : blacklist_) {
      nlohmann::json j;
      j["kind"] = "blacklist";
      j["domain"] = b.domain.to_text();
      j["provenance"] = detail::provenance_to_string(b.provenance);
      j["created"] = b.created;
      j["updated"] = b.updated;
      out << j.dump() << '\n';
    }
    return out.str();
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open registry file for writing: " +
                            path.string());
    out << to_jsonl();
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
  }

  static Registry from_jsonl(std::istream& in) {
    Registry r;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw MalformedRecordError(lineno, e.what());
      }
      try {
        std::string kind = j.at("kind").get<std::string>();
        if (kind == "entry") {
          RegistryEntry e;
          e.domain = dns::parse_name(j.at("domain").get<std::string>());
          const auto& pj = j.at("pattern");
          detail::alphabet_from_string(e.pattern,
                                       pj.at("alphabet").get<std::string>());
          e.pattern.max_label_length = pj.at("max_label_length").get<int>();
          e.pattern.max_total_length = pj.at("max_total_length").get<int>();
          e.pattern.label_count_min = pj.at("label_count_min").get<int>();
          e.pattern.label_count_max = pj.at("label_count_max").get<int>();
          e.pattern.validate();
          e.registrant = j.value("registrant", std::string{});
          std::string status = j.value("status", std::string{"active"});
          if (status == "active")
            e.status = EntryStatus::Active;
          else if (status == "invalidated")
            e.status = EntryStatus::Invalidated;
          else
            throw std::invalid_argument("unknown status: " + status);
          e.created = j.at("created").get<std::int64_t>();
          e.updated = j.at("updated").get<std::int64_t>();
          if (e.domain.label_count() < 2)
            throw std::invalid_argument("registered domain needs >= 2 labels");
          r.entries_[e.domain.canonical()] = std::move(e);
        } else if (kind == "blacklist") {
          BlacklistItem b;
          b.domain = dns::parse_name(j.at("domain").get<std::string>());
          b.provenance = detail::provenance_from_string(
              j.value("provenance", std::string{"imported"}));
          b.created = j.at("created").get<std::int64_t>();
          b.updated = j.at("updated").get<std::int64_t>();
          r.blacklist_[b.domain.canonical()] = std::move(b);
        } else {
          throw std::invalid_argument("unknown record kind: " + kind);
        }
      } catch (const MalformedRecordError&) {
        throw;
      } catch (const std::exception& e) {
        throw MalformedRecordError(lineno, e.what());
      }
    }
    return r;
  }

  static Registry load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open registry file: " + path.string());
    return from_jsonl(in);
  }

  friend bool operator==(const Registry& a, const Registry& b) {
    std::shared_lock la(a.mutex_, std::defer_lock);
    std::shared_lock lb(b.mutex_, std::defer_lock);
    std::lock(la, lb);
    return a.entries_ == b.entries_ && a.blacklist_ == b.blacklist_;
  }

 private:
  bool blacklist_hit(const dns::DomainName& qname) const {
    const auto& labels = qname.labels();
    for (std::size_t k = labels.size(); k >= 1; --k) {
      if (blacklist_.count(qname.suffix(k).canonical())) return true;
    }
    return false;
  }

  mutable std::shared_mutex mutex_;
  std::map<std::string, RegistryEntry> entries_;      // canonical -> entry
  std::map<std::string, BlacklistItem> blacklist_;    // canonical -> item
};

}  // namespace tunnelvet::registry
