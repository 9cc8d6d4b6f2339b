#pragma once

// Deterministic synthetic corpora for five byte-level domains with distinct
// surface statistics: prose, source code, numeric tables, dialogue, markup.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lifelong/errors.hpp"
#include "lifelong/random.hpp"

namespace lifelong::synth {

inline constexpr std::array<std::string_view, 5> kDomains{"prose", "code", "tables", "dialogue", "markup"};

namespace detail {

using Words = std::vector<std::string_view>;

class Writer {
 public:
  explicit Writer(std::uint64_t seed) : rng_(seed) {}

  std::size_t uniform(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  bool chance(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }
  int range(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  // Zipf-like pick: low indices are much more frequent.
  std::string_view pick(const Words& words) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    const auto i = static_cast<std::size_t>(static_cast<double>(words.size()) * u * u);
    return words[std::min(i, words.size() - 1)];
  }
  std::string_view flat(const Words& words) { return words[uniform(words.size())]; }

  std::string digits(int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + uniform(10)));
    return s;
  }

 private:
  Rng rng_;
};

inline std::string capitalized(std::string_view w) {
  std::string s(w);
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  return s;
}

inline const Words& nouns() {
  static const Words w{"house", "river", "garden", "city", "window", "letter", "village", "road", "forest", "table",
                       "child", "teacher", "farmer", "doctor", "king", "queen", "soldier", "horse", "bird", "ship",
                       "mountain", "book", "door", "lamp", "morning", "evening", "winter", "summer", "stone", "field",
                       "bridge", "tower", "market", "church", "harbor", "island", "valley", "storm", "candle", "song",
                       "mirror", "garden", "captain", "merchant", "traveler", "stranger", "sister", "brother", "friend"};
  return w;
}
inline const Words& verbs() {
  static const Words w{"walked", "watched", "found", "carried", "opened", "crossed", "remembered", "followed",
                       "painted", "visited", "answered", "lifted", "closed", "left", "reached", "noticed", "built",
                       "praised", "feared", "loved", "kept", "lost", "called", "heard", "saw", "took", "gave"};
  return w;
}
inline const Words& adjectives() {
  static const Words w{"old", "quiet", "small", "bright", "dark", "narrow", "broad", "cold", "warm", "gentle",
                       "ancient", "golden", "silent", "heavy", "distant", "young", "tired", "proud", "strange",
                       "empty", "green", "white", "grey", "long", "early", "late", "little", "great", "wild"};
  return w;
}
inline const Words& prepositions() {
  static const Words w{"through", "across", "near", "beyond", "under", "over", "beside", "toward", "along", "behind"};
  return w;
}

inline std::string prose_sentence(Writer& w) {
  auto phrase = [&] {
    std::string s = w.chance(0.6) ? "the " : (w.chance(0.5) ? "a " : "her ");
    if (w.chance(0.5)) s += std::string(w.pick(adjectives())) + " ";
    return s + std::string(w.pick(nouns()));
  };
  std::string s = phrase() + " " + std::string(w.pick(verbs())) + " " + phrase();
  if (w.chance(0.5)) s += " " + std::string(w.flat(prepositions())) + " " + phrase();
  if (w.chance(0.3)) s += ", and " + phrase() + " " + std::string(w.pick(verbs())) + " " + phrase();
  return capitalized(s) + (w.chance(0.9) ? ". " : "! ");
}

inline std::string prose(Writer& w) {
  std::string p;
  const int n = w.range(3, 7);
  for (int i = 0; i < n; ++i) p += prose_sentence(w);
  p.back() = '\n';
  return p + "\n";
}

inline const Words& code_nouns() {
  static const Words w{"count", "index", "buffer", "node", "value", "total", "size", "offset", "item", "key",
                       "result", "limit", "state", "entry", "length", "cursor", "sum", "flag", "data", "next"};
  return w;
}
inline const Words& code_verbs() {
  static const Words w{"get", "set", "compute", "update", "find", "read", "write", "parse", "check", "load", "reset"};
  return w;
}
inline const Words& code_types() {
  static const Words w{"int", "size_t", "float", "bool", "double", "char"};
  return w;
}

inline std::string code(Writer& w) {
  auto ident = [&] { return std::string(w.pick(code_nouns())); };
  const std::string type(w.pick(code_types()));
  const std::string a = ident(), b = ident() == a ? "other" : ident();
  std::string f = (w.chance(0.3) ? "static " : "") + type + " " + std::string(w.pick(code_verbs())) + "_" + ident() +
                  "(" + type + " " + a + ", int " + b + ") {\n";
  f += "    " + type + " result = 0;\n";
  const int n = w.range(1, 4);
  for (int i = 0; i < n; ++i) {
    switch (w.uniform(4)) {
      case 0:
        f += "    for (int i = 0; i < " + b + "; ++i) {\n        result += " + a + " * i;\n    }\n";
        break;
      case 1:
        f += "    if (" + a + " > " + w.digits(w.range(1, 3)) + ") {\n        result = " + a + " - " + b + ";\n    }\n";
        break;
      case 2:
        f += "    result = (result + " + a + ") % " + w.digits(w.range(1, 2)) + "1;\n";
        break;
      default:
        f += "    while (" + b + "-- > 0) result ^= " + a + ";\n";
        break;
    }
  }
  return f + "    return result;\n}\n\n";
}

inline const Words& regions() {
  static const Words w{"north", "south", "east", "west", "central", "coastal", "inland", "metro"};
  return w;
}
inline const Words& products() {
  static const Words w{"widget", "gadget", "bolt", "panel", "cable", "sensor", "valve", "motor", "filter", "pump"};
  return w;
}

inline std::string table(Writer& w) {
  std::string t = "id,region,product,date,units,price\n";
  const int rows = w.range(8, 20);
  for (int r = 0; r < rows; ++r) {
    t += w.digits(5) + "," + std::string(w.pick(regions())) + "," + std::string(w.pick(products())) + ",20" +
         std::to_string(w.range(10, 23)) + "-" + (w.chance(0.25) ? "1" : "0") + std::to_string(w.range(1, 9)) + "-" +
         std::to_string(w.range(10, 28)) + "," + std::to_string(w.range(1, 99)) + "," +
         std::to_string(w.range(1, 999)) + "." + w.digits(2) + "\n";
  }
  return t + "\n";
}

inline const Words& speakers() {
  static const Words w{"anna", "ben", "carla", "dev", "emma", "finn", "grace", "hugo"};
  return w;
}
inline const Words& openers() {
  static const Words w{"hey", "so", "well", "ok", "hmm", "yeah", "oh", "honestly", "wait", "right"};
  return w;
}
inline const Words& chat_subjects() {
  static const Words w{"the game", "lunch", "the movie", "your trip", "the party", "work", "the weather",
                       "that new place", "the concert", "your sister", "the meeting", "dinner"};
  return w;
}
inline const Words& chat_comments() {
  static const Words w{"was great", "was kind of boring", "sounds fun", "is tomorrow", "got cancelled",
                       "was way too long", "made me laugh", "is sold out", "was amazing", "went fine"};
  return w;
}

inline std::string dialogue(Writer& w) {
  const std::string a(w.flat(speakers()));
  std::string b(w.flat(speakers()));
  if (b == a) b = "ivy";
  std::string d;
  const int turns = w.range(2, 6);
  for (int t = 0; t < turns; ++t) {
    d += (t % 2 == 0 ? a : b) + ": " + std::string(w.pick(openers())) + ", ";
    switch (w.uniform(3)) {
      case 0: d += "did you hear about " + std::string(w.pick(chat_subjects())) + "?\n"; break;
      case 1:
        d += std::string(w.pick(chat_subjects())) + " " + std::string(w.pick(chat_comments())) +
             (w.chance(0.5) ? ".\n" : " lol\n");
        break;
      default: d += "i think " + std::string(w.pick(chat_subjects())) + " " + std::string(w.pick(chat_comments())) + ".\n";
    }
  }
  return d + "\n";
}

inline const Words& tags() {
  static const Words w{"name", "price", "color", "size", "note", "title", "owner", "status"};
  return w;
}
inline const Words& tag_values() {
  static const Words w{"blue lamp", "red chair", "small box", "oak desk", "glass jar", "steel rack", "paper fan",
                       "wool rug", "active", "archived", "pending", "large", "medium", "green", "black"};
  return w;
}

inline std::string markup(Writer& w) {
  std::string m = "<item id=\"" + w.digits(w.range(2, 4)) + "\">\n";
  const int fields = w.range(2, 5);
  for (int i = 0; i < fields; ++i) {
    const std::string tag(w.pick(tags()));
    m += "  <" + tag;
    if (w.chance(0.3)) m += " lang=\"en\"";
    m += ">" + std::string(w.pick(tag_values())) + "</" + tag + ">\n";
  }
  return m + "</item>\n";
}

}  // namespace detail

/// About `bytes` bytes of text for one domain (whole records, so the result
/// may overshoot by one record). Same (domain, bytes, seed) -> same text.
inline std::string generate(std::string_view domain, std::size_t bytes, std::uint64_t seed) {
  detail::Writer w(derive_seed(seed, domain));
  std::string out;
  out.reserve(bytes + 1024);
  std::string (*record)(detail::Writer&) = nullptr;
  if (domain == "prose") record = detail::prose;
  else if (domain == "code") record = detail::code;
  else if (domain == "tables") record = detail::table;
  else if (domain == "dialogue") record = detail::dialogue;
  else if (domain == "markup") record = detail::markup;
  else throw InvalidArgument("synth: unknown domain '" + std::string(domain) + "'");
  while (out.size() < bytes) out += record(w);
  return out;
}

}  // namespace lifelong::synth
