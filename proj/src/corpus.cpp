#include "stower/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace stower {

Sentence tokenize(const std::string& raw, const Vocab& vocab, int max_len) {
    std::vector<std::string> words = split_tokens(raw);
    if (words.empty()) throw UsageError("tokenize: sentence is empty after trimming");
    Sentence s;
    s.raw = raw;
    s.tokens.push_back(Vocab::kBos);
    for (const std::string& w : words) {
        if (static_cast<int>(s.tokens.size()) - 1 >= max_len) {
            s.truncated = true;
            break;
        }
        s.tokens.push_back(vocab.id(w));
    }
    s.tokens.push_back(Vocab::kEos);
    return s;
}

std::string detokenize(std::span<const std::int32_t> tokens, const Vocab& vocab) {
    std::string out;
    for (std::int32_t id : tokens) {
        if (id == Vocab::kBos || id == Vocab::kEos || id == Vocab::kPad) continue;
        if (!out.empty()) out.push_back(' ');
        out += vocab.token(id);
    }
    return out;
}

std::vector<const Sentence*> StyleCorpus::of_style(int style) const {
    std::vector<const Sentence*> out;
    for (const Sentence& s : sentences) {
        if (s.style == style) out.push_back(&s);
    }
    return out;
}

Batch make_batch(std::span<const Sentence* const> sentences, std::span<const int> indices) {
    Batch batch;
    batch.rows = static_cast<int>(sentences.size());
    int max_len = 0;
    for (const Sentence* s : sentences) max_len = std::max(max_len, s->length());
    batch.cols = max_len;
    batch.tokens.assign(static_cast<std::size_t>(batch.rows) * max_len, Vocab::kPad);
    batch.mask.assign(static_cast<std::size_t>(batch.rows) * max_len, 0.0f);
    for (int r = 0; r < batch.rows; ++r) {
        const Sentence* s = sentences[static_cast<std::size_t>(r)];
        for (int c = 0; c < s->length(); ++c) {
            batch.tokens[static_cast<std::size_t>(r * max_len + c)] = s->tokens[static_cast<std::size_t>(c)];
            batch.mask[static_cast<std::size_t>(r * max_len + c)] = 1.0f;
        }
        batch.styles.push_back(s->style);
        batch.sentence_index.push_back(indices.empty() ? r : indices[static_cast<std::size_t>(r)]);
        batch.non_pad_tokens += s->length();
    }
    return batch;
}

std::vector<Batch> batch_by_tokens(const std::vector<Sentence>& sentences, int token_budget, Rng& rng) {
    for (const Sentence& s : sentences) {
        if (s.length() > token_budget) {
            throw DataError("batch_by_tokens: sentence of " + std::to_string(s.length()) +
                            " tokens exceeds budget " + std::to_string(token_budget));
        }
    }
    std::vector<int> order(sentences.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    std::vector<Batch> batches;
    std::vector<const Sentence*> current;
    std::vector<int> current_idx;
    int used = 0;
    auto flush = [&] {
        if (!current.empty()) {
            batches.push_back(make_batch(current, current_idx));
            current.clear();
            current_idx.clear();
            used = 0;
        }
    };
    for (int idx : order) {
        const Sentence& s = sentences[static_cast<std::size_t>(idx)];
        if (used + s.length() > token_budget) flush();
        current.push_back(&s);
        current_idx.push_back(idx);
        used += s.length();
    }
    flush();
    return batches;
}

std::vector<std::string> read_lines(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

void write_lines(const std::filesystem::path& file, std::span<const std::string> lines) {
    const std::filesystem::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp.string());
        for (const std::string& line : lines) out << line << '\n';
    }
    std::filesystem::rename(tmp, file);
}

RawCorpus load_raw_corpus(const std::filesystem::path& dir, int k) {
    RawCorpus corpus;
    for (int s = 0; s < k; ++s) {
        const auto file = dir / (std::to_string(s) + ".txt");
        corpus.lines_per_style.push_back(read_lines(file));
        if (corpus.lines_per_style.back().empty()) {
            throw DataError("style file " + file.string() + " has no sentences");
        }
    }
    return corpus;
}

std::vector<std::string> RawCorpus::all_lines() const {
    std::vector<std::string> out;
    for (const auto& lines : lines_per_style) out.insert(out.end(), lines.begin(), lines.end());
    return out;
}

StyleCorpus tokenize_corpus(const RawCorpus& raw, const Vocab& vocab, int max_len) {
    StyleCorpus corpus;
    corpus.k = static_cast<int>(raw.lines_per_style.size());
    for (int style = 0; style < corpus.k; ++style) {
        for (const std::string& line : raw.lines_per_style[static_cast<std::size_t>(style)]) {
            Sentence s = tokenize(line, vocab, max_len);
            s.style = style;
            corpus.sentences.push_back(std::move(s));
        }
    }
    return corpus;
}

SyntheticSpec default_synthetic_spec() {
    SyntheticSpec spec;
    spec.marker_lexicons = {
        {"great", "tasty", "lovely", "friendly", "wonderful", "superb", "pleasant", "delightful"},
        {"awful", "bland", "rude", "horrible", "dreadful", "nasty", "dirty", "disappointing"},
    };
    spec.anchor_lexicon = {"food", "service", "place", "staff", "coffee", "pizza",
                           "room", "music", "bread", "decor"};
    return spec;
}

namespace {

// Templates are shared between styles so only the marker carries style.
// {A} = anchor noun, {M} = style marker. Marker positions are spread from
// early to late so a position shortcut cannot stand in for content.
const std::vector<std::string> kTemplates = {
    "the {A} was {M}",
    "i found the {A} quite {M}",
    "{M} is how the {A} felt",
    "a {M} bit of {A} today",
    "the {A} seemed {M} to me",
    "that was {M} {A} in my view",
    "such {M} {A} around here",
    "the {A} and the {A2} were {M}",
};

std::string fill_template(const std::string& tpl, const std::string& anchor,
                          const std::string& anchor2, const std::string& marker) {
    std::string out = tpl;
    auto replace_once = [&out](const std::string& key, const std::string& value) {
        const std::size_t pos = out.find(key);
        if (pos != std::string::npos) out.replace(pos, key.size(), value);
    };
    replace_once("{A2}", anchor2);
    replace_once("{A}", anchor);
    replace_once("{M}", marker);
    return out;
}

} // namespace

SyntheticCorpus gen_synthetic_corpus(std::uint64_t seed, int n_per_style, const SyntheticSpec& spec) {
    if (spec.marker_lexicons.size() < 2) throw UsageError("gen_synthetic_corpus: need at least 2 styles");
    if (n_per_style <= 0) throw UsageError("gen_synthetic_corpus: n_per_style must be positive");

    std::set<std::string> seen;
    for (const auto& lex : spec.marker_lexicons) {
        if (lex.empty()) throw UsageError("gen_synthetic_corpus: empty marker lexicon");
        for (const std::string& m : lex) {
            if (!seen.insert(m).second) {
                throw UsageError("gen_synthetic_corpus: marker '" + m + "' appears in more than one lexicon");
            }
        }
    }
    std::set<std::string> template_words;
    for (const std::string& tpl : kTemplates) {
        for (const std::string& w : split_tokens(tpl)) {
            if (w != "{a}" && w != "{m}" && w != "{a2}") template_words.insert(w);
        }
    }
    for (const std::string& a : spec.anchor_lexicon) {
        if (seen.contains(a)) {
            throw UsageError("gen_synthetic_corpus: anchor '" + a + "' collides with a marker lexicon");
        }
        if (template_words.contains(a)) {
            throw UsageError("gen_synthetic_corpus: anchor '" + a + "' collides with a template word");
        }
    }
    for (const std::string& w : template_words) {
        if (seen.contains(w)) {
            throw UsageError("gen_synthetic_corpus: marker '" + w + "' collides with a template word");
        }
    }
    if (spec.anchor_lexicon.empty()) throw UsageError("gen_synthetic_corpus: empty anchor lexicon");

    Rng rng(seed);
    SyntheticCorpus corpus;
    corpus.lines_per_style.resize(spec.marker_lexicons.size());
    for (std::size_t style = 0; style < spec.marker_lexicons.size(); ++style) {
        const auto& markers = spec.marker_lexicons[style];
        for (int i = 0; i < n_per_style; ++i) {
            const std::string& tpl = kTemplates[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(kTemplates.size())))];
            const std::string& anchor =
                spec.anchor_lexicon[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(spec.anchor_lexicon.size())))];
            const std::string& anchor2 =
                spec.anchor_lexicon[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(spec.anchor_lexicon.size())))];
            const std::string& marker = markers[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(markers.size())))];
            SyntheticEntry entry;
            entry.text = fill_template(tpl, anchor, anchor2, marker);
            entry.style = static_cast<int>(style);
            entry.markers = {marker};
            corpus.lines_per_style[style].push_back(entry.text);
            corpus.manifest.push_back(std::move(entry));
        }
    }
    return corpus;
}

std::string synthetic_manifest_jsonl(const SyntheticCorpus& corpus) {
    std::ostringstream os;
    for (const SyntheticEntry& e : corpus.manifest) {
        nlohmann::json j;
        j["text"] = e.text;
        j["style"] = e.style;
        j["markers"] = e.markers;
        os << j.dump() << '\n';
    }
    return os.str();
}

} // namespace stower
