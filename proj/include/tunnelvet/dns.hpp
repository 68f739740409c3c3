#pragma once

// Minimal DNS wire codec: queries, responses and the record types a
// tunnel-vetting forwarder actually touches. UDP payloads only, no EDNS0.
// The encoder never emits compression pointers; the decoder accepts them.

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace tunnelvet::dns {

inline constexpr std::size_t kMaxLabelLength = 63;
inline constexpr std::size_t kMaxNameWireLength = 255;
inline constexpr std::size_t kMaxUdpPayload = 512;
inline constexpr std::size_t kHeaderSize = 12;

namespace qtype {
inline constexpr std::uint16_t a = 1;
inline constexpr std::uint16_t cname = 5;
inline constexpr std::uint16_t null = 10;
inline constexpr std::uint16_t txt = 16;
inline constexpr std::uint16_t aaaa = 28;
}  // namespace qtype

namespace qclass {
inline constexpr std::uint16_t in = 1;
}

namespace rcode {
inline constexpr std::uint8_t noerror = 0;
inline constexpr std::uint8_t formerr = 1;
inline constexpr std::uint8_t servfail = 2;
inline constexpr std::uint8_t nxdomain = 3;
}  // namespace rcode

inline char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c + ('a' - 'A')) : c;
}

inline std::string ascii_lower_copy(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = ascii_lower(c);
  return out;
}

class NameError : public std::runtime_error {
 public:
  enum class Kind { EmptyLabel, LabelTooLong, NameTooLong };

  NameError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class DecodeError : public std::runtime_error {
 public:
  enum class Kind { Truncated, PointerLoop, BadLabelLength };

  DecodeError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class EncodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A domain name as an ordered sequence of labels. Labels are opaque octet
// strings; only ASCII letters fold for comparison. A default-constructed
// name is the root (zero labels), which the wire codec can produce but
// parse() never does.
class DomainName {
 public:
  DomainName() = default;

  static DomainName from_labels(std::vector<std::string> labels) {
    std::size_t wire = 1;  // terminal root octet
    for (const auto& label : labels) {
      if (label.empty())
        throw NameError(NameError::Kind::EmptyLabel, "empty label");
      if (label.size() > kMaxLabelLength)
        throw NameError(NameError::Kind::LabelTooLong,
                        "label exceeds 63 octets: " + label);
      wire += 1 + label.size();
    }
    if (wire > kMaxNameWireLength)
      throw NameError(NameError::Kind::NameTooLong,
                      "name exceeds 255 wire octets");
    DomainName n;
    n.labels_ = std::move(labels);
    return n;
  }

  // Presentation-format input ("a.b.c" or "a.b.c."). Backslash escapes:
  // "\." is a literal dot, "\\" a backslash, "\DDD" a decimal octet.
  static DomainName parse(std::string_view text) {
    std::vector<std::string> labels;
    std::string current;
    bool saw_root_dot = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
      char c = text[i];
      if (saw_root_dot)
        throw NameError(NameError::Kind::EmptyLabel,
                        "characters after trailing root dot");
      if (c == '\\') {
        if (i + 1 >= text.size())
          throw NameError(NameError::Kind::EmptyLabel,
                          "dangling escape at end of name");
        char next = text[i + 1];
        if (next >= '0' && next <= '9') {
          if (i + 3 >= text.size() || text[i + 2] < '0' || text[i + 2] > '9' ||
              text[i + 3] < '0' || text[i + 3] > '9')
            throw NameError(NameError::Kind::EmptyLabel,
                            "malformed \\DDD escape");
          int value = (next - '0') * 100 + (text[i + 2] - '0') * 10 +
                      (text[i + 3] - '0');
          if (value > 255)
            throw NameError(NameError::Kind::EmptyLabel,
                            "\\DDD escape out of range");
          current.push_back(static_cast<char>(value));
          i += 3;
        } else {
          current.push_back(next);
          ++i;
        }
        continue;
      }
      if (c == '.') {
        if (current.empty()) {
          if (i + 1 == text.size() && !labels.empty()) {
            saw_root_dot = true;
            continue;
          }
          throw NameError(NameError::Kind::EmptyLabel, "empty label in name");
        }
        labels.push_back(std::move(current));
        current.clear();
        if (i + 1 == text.size()) saw_root_dot = true;
        continue;
      }
      current.push_back(c);
    }
    if (!current.empty()) labels.push_back(std::move(current));
    if (labels.empty())
      throw NameError(NameError::Kind::EmptyLabel, "empty name");
    return from_labels(std::move(labels));
  }

  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t label_count() const { return labels_.size(); }
  bool is_root() const { return labels_.empty(); }

  std::size_t wire_length() const {
    std::size_t n = 1;
    for (const auto& l : labels_) n += 1 + l.size();
    return n;
  }

  // Character count of the unescaped presentation form, trailing dot
  // excluded: sum of label lengths plus the separating dots.
  std::size_t presentation_length() const {
    if (labels_.empty()) return 0;
    std::size_t n = labels_.size() - 1;
    for (const auto& l : labels_) n += l.size();
    return n;
  }

  std::string to_text() const {
    if (labels_.empty()) return ".";
    std::string out;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (i) out.push_back('.');
      for (char c : labels_[i]) {
        if (c == '.' || c == '\\') {
          out.push_back('\\');
          out.push_back(c);
        } else if (static_cast<unsigned char>(c) < 0x21 ||
                   static_cast<unsigned char>(c) > 0x7e) {
          unsigned v = static_cast<unsigned char>(c);
          out.push_back('\\');
          out.push_back(static_cast<char>('0' + v / 100));
          out.push_back(static_cast<char>('0' + (v / 10) % 10));
          out.push_back(static_cast<char>('0' + v % 10));
        } else {
          out.push_back(c);
        }
      }
    }
    return out;
  }

  // Case-folded dotted form; the canonical key for maps and equality.
  std::string canonical() const {
    std::string out;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (i) out.push_back('.');
      for (char c : labels_[i]) out.push_back(ascii_lower(c));
    }
    return out;
  }

  // The last `n` labels as a name. Requires n <= label_count().
  DomainName suffix(std::size_t n) const {
    DomainName out;
    out.labels_.assign(labels_.end() - static_cast<std::ptrdiff_t>(n),
                       labels_.end());
    return out;
  }

  bool has_suffix(const DomainName& s) const {
    if (s.labels_.size() > labels_.size()) return false;
    auto it = labels_.end() - static_cast<std::ptrdiff_t>(s.labels_.size());
    for (const auto& sl : s.labels_) {
      if (!label_equal(*it++, sl)) return false;
    }
    return true;
  }

  friend bool operator==(const DomainName& a, const DomainName& b) {
    if (a.labels_.size() != b.labels_.size()) return false;
    for (std::size_t i = 0; i < a.labels_.size(); ++i)
      if (!label_equal(a.labels_[i], b.labels_[i])) return false;
    return true;
  }

  friend std::strong_ordering operator<=>(const DomainName& a,
                                          const DomainName& b) {
    return a.canonical() <=> b.canonical();
  }

 private:
  static bool label_equal(const std::string& a, const std::string& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (ascii_lower(a[i]) != ascii_lower(b[i])) return false;
    return true;
  }

  std::vector<std::string> labels_;
};

struct DnsHeader {
  std::uint16_t id = 0;
  bool qr = false;
  std::uint8_t opcode = 0;  // 4 bits
  bool aa = false;
  bool tc = false;
  bool rd = false;
  bool ra = false;
  std::uint8_t rcode = 0;  // 4 bits
  std::uint16_t qdcount = 0;
  std::uint16_t ancount = 0;
  std::uint16_t nscount = 0;
  std::uint16_t arcount = 0;

  friend bool operator==(const DnsHeader&, const DnsHeader&) = default;
};

struct Question {
  DomainName qname;
  std::uint16_t qtype = qtype::a;
  std::uint16_t qclass = qclass::in;

  friend bool operator==(const Question&, const Question&) = default;
};

struct ARecord {
  std::array<std::uint8_t, 4> addr{};
  friend bool operator==(const ARecord&, const ARecord&) = default;
};

struct AaaaRecord {
  std::array<std::uint8_t, 16> addr{};
  friend bool operator==(const AaaaRecord&, const AaaaRecord&) = default;
};

struct TxtRecord {
  std::vector<std::string> strings;  // each <= 255 octets
  friend bool operator==(const TxtRecord&, const TxtRecord&) = default;
};

struct CnameRecord {
  DomainName target;
  friend bool operator==(const CnameRecord&, const CnameRecord&) = default;
};

struct OpaqueRdata {
  std::vector<std::uint8_t> bytes;
  friend bool operator==(const OpaqueRdata&, const OpaqueRdata&) = default;
};

using Rdata =
    std::variant<ARecord, AaaaRecord, TxtRecord, CnameRecord, OpaqueRdata>;

struct ResourceRecord {
  DomainName name;
  std::uint16_t rtype = qtype::a;
  std::uint16_t rclass = qclass::in;
  std::uint32_t ttl = 0;
  Rdata rdata;

  friend bool operator==(const ResourceRecord&, const ResourceRecord&) =
      default;
};

struct DnsMessage {
  DnsHeader header;
  std::vector<Question> questions;
  std::vector<ResourceRecord> answers;
  std::vector<ResourceRecord> authorities;
  std::vector<ResourceRecord> additionals;

  void sync_counts() {
    header.qdcount = static_cast<std::uint16_t>(questions.size());
    header.ancount = static_cast<std::uint16_t>(answers.size());
    header.nscount = static_cast<std::uint16_t>(authorities.size());
    header.arcount = static_cast<std::uint16_t>(additionals.size());
  }

  friend bool operator==(const DnsMessage&, const DnsMessage&) = default;
};

inline DnsMessage make_query(std::uint16_t id, DomainName qname,
                             std::uint16_t type, bool rd = true) {
  DnsMessage m;
  m.header.id = id;
  m.header.rd = rd;
  m.questions.push_back(Question{std::move(qname), type, qclass::in});
  m.sync_counts();
  return m;
}

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  put_u16(out, static_cast<std::uint16_t>(v >> 16));
  put_u16(out, static_cast<std::uint16_t>(v & 0xffff));
}

inline void put_name(std::vector<std::uint8_t>& out, const DomainName& name) {
  for (const auto& label : name.labels()) {
    out.push_back(static_cast<std::uint8_t>(label.size()));
    out.insert(out.end(), label.begin(), label.end());
  }
  out.push_back(0);
}

inline std::vector<std::uint8_t> rdata_bytes(const Rdata& rdata) {
  std::vector<std::uint8_t> out;
  std::visit(
      [&out](const auto& r) {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ARecord>) {
          out.assign(r.addr.begin(), r.addr.end());
        } else if constexpr (std::is_same_v<T, AaaaRecord>) {
          out.assign(r.addr.begin(), r.addr.end());
        } else if constexpr (std::is_same_v<T, TxtRecord>) {
          for (const auto& s : r.strings) {
            if (s.size() > 255)
              throw std::invalid_argument("TXT string exceeds 255 octets");
            out.push_back(static_cast<std::uint8_t>(s.size()));
            out.insert(out.end(), s.begin(), s.end());
          }
        } else if constexpr (std::is_same_v<T, CnameRecord>) {
          put_name(out, r.target);
        } else {
          out = r.bytes;
        }
      },
      rdata);
  return out;
}

inline std::vector<std::uint8_t> record_bytes(const ResourceRecord& rr) {
  std::vector<std::uint8_t> out;
  put_name(out, rr.name);
  put_u16(out, rr.rtype);
  put_u16(out, rr.rclass);
  put_u32(out, rr.ttl);
  auto rd = rdata_bytes(rr.rdata);
  put_u16(out, static_cast<std::uint16_t>(rd.size()));
  out.insert(out.end(), rd.begin(), rd.end());
  return out;
}

inline std::uint16_t flags_word(const DnsHeader& h) {
  std::uint16_t f = 0;
  if (h.qr) f |= 0x8000;
  f |= static_cast<std::uint16_t>((h.opcode & 0x0f) << 11);
  if (h.aa) f |= 0x0400;
  if (h.tc) f |= 0x0200;
  if (h.rd) f |= 0x0100;
  if (h.ra) f |= 0x0080;
  f |= (h.rcode & 0x0f);
  return f;
}

struct ByteReader {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > data.size())
      throw DecodeError(DecodeError::Kind::Truncated,
                        "message truncated at offset " + std::to_string(pos));
  }

  std::uint8_t u8() {
    need(1);
    return data[pos++];
  }

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(data[pos] << 8) | data[pos + 1];
    pos += 2;
    return v;
  }

  std::uint32_t u32() {
    std::uint32_t hi = u16();
    return (hi << 16) | u16();
  }

  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(data.begin() + pos, data.begin() + pos + n);
    pos += n;
    return out;
  }
};

// Reads a possibly-compressed name. Pointers must target strictly earlier
// offsets; anything else is treated as a loop, which bounds the walk by the
// message length.
inline DomainName read_name(ByteReader& r) {
  std::vector<std::string> labels;
  std::size_t pos = r.pos;
  std::size_t name_wire = 1;
  bool jumped = false;
  for (;;) {
    if (pos >= r.data.size())
      throw DecodeError(DecodeError::Kind::Truncated,
                        "name runs past end of message");
    std::uint8_t len = r.data[pos];
    if (len == 0) {
      if (!jumped) r.pos = pos + 1;
      break;
    }
    if ((len & 0xc0) == 0xc0) {
      if (pos + 1 >= r.data.size())
        throw DecodeError(DecodeError::Kind::Truncated,
                          "compression pointer truncated");
      std::size_t target =
          (static_cast<std::size_t>(len & 0x3f) << 8) | r.data[pos + 1];
      if (!jumped) r.pos = pos + 2;
      jumped = true;
      if (target >= pos)
        throw DecodeError(DecodeError::Kind::PointerLoop,
                          "compression pointer does not move backwards");
      pos = target;
      continue;
    }
    if ((len & 0xc0) != 0)
      throw DecodeError(DecodeError::Kind::BadLabelLength,
                        "reserved label type bits set");
    if (pos + 1 + len > r.data.size())
      throw DecodeError(DecodeError::Kind::Truncated, "label truncated");
    name_wire += 1 + len;
    if (name_wire > kMaxNameWireLength)
      throw DecodeError(DecodeError::Kind::BadLabelLength,
                        "name expands past 255 octets");
    labels.emplace_back(r.data.begin() + pos + 1, r.data.begin() + pos + 1 + len);
    pos += 1 + len;
  }
  DomainName out;
  // Labels straight off the wire satisfy the invariants checked above;
  // bypass from_labels to permit the root name.
  if (!labels.empty()) out = DomainName::from_labels(std::move(labels));
  return out;
}

inline Rdata parse_rdata(std::uint16_t rtype,
                         std::span<const std::uint8_t> whole,
                         std::size_t rdata_offset,
                         std::span<const std::uint8_t> raw) {
  switch (rtype) {
    case qtype::a:
      if (raw.size() == 4) {
        ARecord a;
        std::copy(raw.begin(), raw.end(), a.addr.begin());
        return a;
      }
      break;
    case qtype::aaaa:
      if (raw.size() == 16) {
        AaaaRecord a;
        std::copy(raw.begin(), raw.end(), a.addr.begin());
        return a;
      }
      break;
    case qtype::txt: {
      TxtRecord t;
      std::size_t i = 0;
      bool ok = !raw.empty();
      while (i < raw.size()) {
        std::size_t n = raw[i];
        if (i + 1 + n > raw.size()) {
          ok = false;
          break;
        }
        t.strings.emplace_back(raw.begin() + i + 1, raw.begin() + i + 1 + n);
        i += 1 + n;
      }
      if (ok) return t;
      break;
    }
    case qtype::cname: {
      ByteReader nr{whole, rdata_offset};
      DomainName target = read_name(nr);  // pointer errors propagate
      if (nr.pos == rdata_offset + raw.size())
        return CnameRecord{std::move(target)};
      break;
    }
    default:
      break;
  }
  return OpaqueRdata{std::vector<std::uint8_t>(raw.begin(), raw.end())};
}

inline ResourceRecord read_record(ByteReader& r) {
  ResourceRecord rr;
  rr.name = read_name(r);
  rr.rtype = r.u16();
  rr.rclass = r.u16();
  rr.ttl = r.u32();
  std::uint16_t rdlength = r.u16();
  r.need(rdlength);
  std::size_t rdata_offset = r.pos;
  auto raw = r.data.subspan(rdata_offset, rdlength);
  r.pos += rdlength;
  rr.rdata = parse_rdata(rr.rtype, r.data, rdata_offset, raw);
  return rr;
}

}  // namespace detail

// RFC 1035 wire layout, compression-free. Messages larger than 512 octets
// get records dropped from the tail sections (additionals, authorities,
// answers) and the TC flag set. Throws EncodeError only when the header and
// question section alone cannot fit.
inline std::vector<std::uint8_t> encode(const DnsMessage& msg) {
  std::vector<std::uint8_t> questions;
  for (const auto& q : msg.questions) {
    detail::put_name(questions, q.qname);
    detail::put_u16(questions, q.qtype);
    detail::put_u16(questions, q.qclass);
  }
  std::array<const std::vector<ResourceRecord>*, 3> sections{
      &msg.answers, &msg.authorities, &msg.additionals};
  std::array<std::vector<std::vector<std::uint8_t>>, 3> encoded;
  std::size_t total = kHeaderSize + questions.size();
  for (std::size_t s = 0; s < 3; ++s) {
    for (const auto& rr : *sections[s]) {
      encoded[s].push_back(detail::record_bytes(rr));
      total += encoded[s].back().size();
    }
  }

  bool truncated = false;
  for (int s = 2; s >= 0 && total > kMaxUdpPayload; --s) {
    while (!encoded[s].empty() && total > kMaxUdpPayload) {
      total -= encoded[s].back().size();
      encoded[s].pop_back();
      truncated = true;
    }
  }
  if (total > kMaxUdpPayload)
    throw EncodeError("message exceeds 512 octets even with empty sections");

  DnsHeader h = msg.header;
  h.qdcount = static_cast<std::uint16_t>(msg.questions.size());
  h.ancount = static_cast<std::uint16_t>(encoded[0].size());
  h.nscount = static_cast<std::uint16_t>(encoded[1].size());
  h.arcount = static_cast<std::uint16_t>(encoded[2].size());
  if (truncated) h.tc = true;

  std::vector<std::uint8_t> out;
  out.reserve(total);
  detail::put_u16(out, h.id);
  detail::put_u16(out, detail::flags_word(h));
  detail::put_u16(out, h.qdcount);
  detail::put_u16(out, h.ancount);
  detail::put_u16(out, h.nscount);
  detail::put_u16(out, h.arcount);
  out.insert(out.end(), questions.begin(), questions.end());
  for (const auto& section : encoded)
    for (const auto& rec : section) out.insert(out.end(), rec.begin(), rec.end());
  return out;
}

inline DnsMessage decode(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r{bytes, 0};
  DnsMessage m;
  m.header.id = r.u16();
  std::uint16_t flags = r.u16();
  m.header.qr = flags & 0x8000;
  m.header.opcode = static_cast<std::uint8_t>((flags >> 11) & 0x0f);
  m.header.aa = flags & 0x0400;
  m.header.tc = flags & 0x0200;
  m.header.rd = flags & 0x0100;
  m.header.ra = flags & 0x0080;
  m.header.rcode = static_cast<std::uint8_t>(flags & 0x0f);
  m.header.qdcount = r.u16();
  m.header.ancount = r.u16();
  m.header.nscount = r.u16();
  m.header.arcount = r.u16();

  for (std::uint16_t i = 0; i < m.header.qdcount; ++i) {
    Question q;
    q.qname = detail::read_name(r);
    q.qtype = r.u16();
    q.qclass = r.u16();
    m.questions.push_back(std::move(q));
  }
  auto read_section = [&r](std::uint16_t count,
                           std::vector<ResourceRecord>& out) {
    for (std::uint16_t i = 0; i < count; ++i)
      out.push_back(detail::read_record(r));
  };
  read_section(m.header.ancount, m.answers);
  read_section(m.header.nscount, m.authorities);
  read_section(m.header.arcount, m.additionals);
  return m;
}

inline DnsMessage decode(const std::vector<std::uint8_t>& bytes) {
  return decode(std::span<const std::uint8_t>(bytes));
}

// Presentation-format convenience used throughout the service.
inline DomainName parse_name(std::string_view text) {
  return DomainName::parse(text);
}

}  // namespace tunnelvet::dns
