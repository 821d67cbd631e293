#include "cap/segments.hpp"

#include <fstream>
#include <optional>

#include "cap/errors.hpp"
#include "cap/unicode.hpp"
#include "json.hpp"

namespace cap {

namespace {

enum class ByteKind : unsigned char { Space, Word, Punct };

struct ByteInfo {
  ByteKind kind;
  std::size_t word;  // meaningful unless kind == Space
};

std::vector<ByteInfo> classify_bytes(const std::string& text) {
  std::vector<ByteInfo> info(text.size());
  std::size_t word = 0;
  bool in_word = false;
  for (std::size_t pos = 0; pos < text.size();) {
    const auto d = unicode::decode(text, pos);
    ByteInfo b{ByteKind::Punct, 0};
    if (d.valid && unicode::is_space(d.cp)) {
      in_word = false;
      b.kind = ByteKind::Space;
    } else {
      if (!in_word) {
        ++word;
        in_word = true;
      }
      b.word = word;
      if (d.valid && (unicode::is_letter(d.cp) || unicode::is_number(d.cp))) b.kind = ByteKind::Word;
    }
    for (std::size_t i = 0; i < d.length; ++i) info[pos + i] = b;
    pos += d.length;
  }
  return info;
}

void push_run(SegmentRanges& out, std::size_t first, std::size_t last) {
  if (last > first) out.ranges.push_back({first, last});
}

}  // namespace

SegmentRanges word_ranges(const TokenizedText& tok, const WordSegmentOptions& options) {
  const std::vector<ByteInfo> info = classify_bytes(tok.text);
  SegmentRanges out;
  out.granularity = Granularity::Word;

  std::optional<std::size_t> run_word;
  std::size_t run_first = 0;
  for (std::size_t t = 0; t < tok.size(); ++t) {
    std::optional<std::size_t> word;
    bool has_word_char = false;
    for (std::size_t b = tok.offsets[t].start; b < tok.offsets[t].end; ++b) {
      if (info[b].kind == ByteKind::Space) continue;
      if (word && *word != info[b].word) {
        throw Error("internal consistency error: token " + std::to_string(t) + " straddles a whitespace boundary");
      }
      word = info[b].word;
      has_word_char |= info[b].kind == ByteKind::Word;
    }
    const bool groupable = word && (has_word_char || options.attach_punctuation);
    if (groupable && run_word == word) continue;
    if (run_word) push_run(out, run_first, t - 1);
    run_word = groupable ? word : std::nullopt;
    run_first = t;
  }
  if (run_word) push_run(out, run_first, tok.size() - 1);
  return out;
}

PhraseAlignment phrase_ranges(const TokenizedText& tok, const std::vector<PhraseSpan>& spans) {
  PhraseAlignment out;
  out.ranges.granularity = Granularity::Phrase;
  const std::string& text = tok.text;
  auto non_space_in = [&](std::size_t from, std::size_t to) {
    for (std::size_t pos = from; pos < to;) {
      const auto d = unicode::decode(text, pos);
      if (!(d.valid && unicode::is_space(d.cp))) return true;
      pos += d.length;
    }
    return false;
  };

  std::size_t previous_end = 0;
  for (std::size_t s = 0; s < spans.size(); ++s) {
    const PhraseSpan& span = spans[s];
    if (span.end < span.start) throw InputError("phrase span " + std::to_string(s) + " ends before it starts");
    if (s > 0 && span.start < previous_end) {
      throw InputError("phrase spans " + std::to_string(s - 1) + " and " + std::to_string(s) +
                       " overlap or are out of order");
    }
    previous_end = span.end;
    const std::size_t bs = unicode::byte_offset_of(text, span.start);
    const std::size_t be = unicode::byte_offset_of(text, span.end);
    if (bs == be || !non_space_in(bs, be)) {
      out.warnings.push_back("span " + std::to_string(s) + " (" + span.label + ") covers no text; ignored");
      continue;
    }

    std::size_t first = 0;
    while (tok.offsets[first].end <= bs) ++first;
    std::size_t last = first;
    while (last + 1 < tok.size() && tok.offsets[last + 1].start < be) ++last;
    if (non_space_in(tok.offsets[first].start, bs) || non_space_in(be, tok.offsets[last].end)) {
      out.warnings.push_back("span " + std::to_string(s) + " (" + span.label + ") cuts through a token; widened to tokens " +
                             std::to_string(first) + ".." + std::to_string(last));
    }

    auto& ranges = out.ranges.ranges;
    if (!ranges.empty() && ranges.back().last >= first) {
      out.warnings.push_back("span " + std::to_string(s) + " (" + span.label +
                             ") shares a token with the previous span; ranges merged");
      ranges.back().last = std::max(ranges.back().last, last);
    } else {
      ranges.push_back({first, last});
    }
  }
  std::erase_if(out.ranges.ranges, [](const TokenRange& r) { return r.length() < 2; });
  return out;
}

PhraseSpanFile load_phrase_spans(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open span file " + path.string());
  PhraseSpanFile file;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("meta") && !j.contains("id")) continue;
      std::string id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      std::vector<PhraseSpan> spans;
      for (const auto& s : j.at("spans")) {
        if (!s.is_array() || s.size() < 2) throw InputError(where + ": span must be [start, end, label]");
        spans.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>(), s.size() > 2 ? s[2].get<std::string>() : ""});
      }
      if (!file.emplace(std::move(id), std::move(spans)).second) throw InputError(where + ": duplicate id");
    } catch (const nlohmann::json::exception& e) {
      throw InputError(where + ": " + e.what());
    }
  }
  return file;
}

}  // namespace cap
