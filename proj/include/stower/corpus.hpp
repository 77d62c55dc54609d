#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stower/rng.hpp"
#include "stower/vocab.hpp"

namespace stower {

/// One labeled sentence: bos + content ids + eos.
struct Sentence {
    std::string raw;
    std::vector<std::int32_t> tokens;
    int style = -1;
    bool truncated = false;

    int length() const { return static_cast<int>(tokens.size()); }
    int content_length() const { return static_cast<int>(tokens.size()) - 2; }
};

/// Content tokens are capped at max_len; overflow sets `truncated`.
Sentence tokenize(const std::string& raw, const Vocab& vocab, int max_len = 64);
std::string detokenize(std::span<const std::int32_t> tokens, const Vocab& vocab);

struct StyleCorpus {
    int k = 0;
    std::vector<Sentence> sentences;

    std::vector<const Sentence*> of_style(int style) const;
};

/// Padded token rectangle plus the 0/1 validity mask.
struct Batch {
    int rows = 0;
    int cols = 0;
    std::vector<std::int32_t> tokens;     // rows*cols, kPad filled
    std::vector<float> mask;              // 1 where a real token sits
    std::vector<int> styles;              // per row
    std::vector<int> sentence_index;      // position in the source list
    int non_pad_tokens = 0;

    std::int32_t at(int r, int c) const { return tokens[static_cast<std::size_t>(r * cols + c)]; }
};

Batch make_batch(std::span<const Sentence* const> sentences, std::span<const int> indices);

/// Shuffles by the rng, then packs greedily so each batch stays within
/// token_budget non-pad tokens. Every sentence appears exactly once.
std::vector<Batch> batch_by_tokens(const std::vector<Sentence>& sentences, int token_budget, Rng& rng);

// ---- corpus files -------------------------------------------------------

/// One sentence per line, UTF-8, LF endings.
std::vector<std::string> read_lines(const std::filesystem::path& file);
void write_lines(const std::filesystem::path& file, std::span<const std::string> lines);

/// Loads `<style>.txt` files (0.txt, 1.txt, ...) from a directory.
struct RawCorpus {
    std::vector<std::vector<std::string>> lines_per_style;
    std::vector<std::string> all_lines() const;
};
RawCorpus load_raw_corpus(const std::filesystem::path& dir, int k = 2);

StyleCorpus tokenize_corpus(const RawCorpus& raw, const Vocab& vocab, int max_len = 64);

// ---- synthetic two-style generator --------------------------------------

struct SyntheticSpec {
    std::vector<std::vector<std::string>> marker_lexicons;  // one per style
    std::vector<std::string> anchor_lexicon;                // style-neutral nouns
};

SyntheticSpec default_synthetic_spec();

struct SyntheticEntry {
    std::string text;
    int style = 0;
    std::vector<std::string> markers;
};

struct SyntheticCorpus {
    std::vector<std::vector<std::string>> lines_per_style;
    std::vector<SyntheticEntry> manifest;

    RawCorpus raw() const { return RawCorpus{lines_per_style}; }
};

/// Every sentence is an anchor template carrying at least one marker from
/// its own style's lexicon and none from any other. Lexicons must be
/// disjoint from each other and from the anchors.
SyntheticCorpus gen_synthetic_corpus(std::uint64_t seed, int n_per_style, const SyntheticSpec& spec);

/// Serializes manifest entries as JSON lines ({"text","style","markers"}).
std::string synthetic_manifest_jsonl(const SyntheticCorpus& corpus);

} // namespace stower
