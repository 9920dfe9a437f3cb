#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace advrep::data {

/// Malformed or missing input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Record {
    std::size_t label = 0;
    std::string text;
    bool operator==(const Record&) const = default;
};

struct RawDataset {
    std::vector<Record> records;
    std::size_t num_classes = 0;
};

/// One `label<TAB>text` record per line, no header. CRLF is accepted.
RawDataset load_tsv(const std::filesystem::path& path);
void write_tsv(const std::filesystem::path& path, const RawDataset& raw);

/// Lowercased whitespace tokens.
std::vector<std::string> split_words(const std::string& text);

class Vocabulary {
public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kUnk = 1;
    static constexpr std::size_t kCls = 2;
    static constexpr std::size_t kReserved = 3;

    Vocabulary();
    explicit Vocabulary(const std::vector<std::string>& words);

    std::size_t size() const { return tokens_.size(); }
    std::size_t id(const std::string& token) const;
    const std::string& token(std::size_t id) const;
    bool contains(const std::string& token) const { return ids_.count(token) != 0; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> ids_;
};

/// Tokens with frequency >= min_freq, most frequent first, ties broken
/// lexicographically, at most max_size of them after the reserved ids.
Vocabulary build_vocab(const RawDataset& raw, std::size_t min_freq = 1, std::size_t max_size = SIZE_MAX);

struct Tokens {
    std::vector<std::size_t> ids;
    std::vector<int> mask;
};

/// [CLS] + tokens truncated to max_len - 1, PAD-filled to max_len.
Tokens tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len);
/// Space-joined tokens at masked-in positions after CLS.
std::string detokenize(const Tokens& tokens, const Vocabulary& vocab);

struct TokenizedExample {
    std::size_t index = 0;  // memory-bank row
    std::vector<std::size_t> token_ids;
    std::vector<int> mask;
    std::size_t label = 0;
};

struct Dataset {
    std::vector<TokenizedExample> examples;
    std::size_t num_classes = 0;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
    std::vector<std::size_t> labels() const;
};

/// Tokenizes every record; indices are 0..N-1 in file order.
Dataset tokenize_dataset(const RawDataset& raw, const Vocabulary& vocab, std::size_t max_len);

struct SynthSpec {
    std::size_t num_classes = 2;
    std::size_t num_examples = 1000;
    std::size_t vocab_size = 197;  // distinct words, indicators included
    std::pair<std::size_t, std::size_t> len_range{6, 15};
    std::size_t keywords_per_class = 5;
    std::uint64_t seed = 0;
};

/// Indicator word `k<class>_<j>` for the synthetic task.
std::string indicator_word(std::size_t cls, std::size_t j);
/// Filler word `w<j>`.
std::string filler_word(std::size_t j);

/// Keyword-spotting task: every example carries 1-3 indicator words of its
/// own class and filler words elsewhere. Balanced and seed-deterministic.
RawDataset synth_generate(const SynthSpec& spec);

}  // namespace advrep::data
