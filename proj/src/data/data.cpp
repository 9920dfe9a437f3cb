#include "advrep/data/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace advrep::data {

RawDataset load_tsv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open data file " + path.string());
    RawDataset raw;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected label<TAB>text");
        }
        const std::string label = line.substr(0, tab);
        if (label.empty() || !std::all_of(label.begin(), label.end(), [](unsigned char c) { return std::isdigit(c); })) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": label '" + label +
                            "' is not a non-negative integer");
        }
        Record rec;
        try {
            rec.label = static_cast<std::size_t>(std::stoull(label));
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": label out of range");
        }
        rec.text = line.substr(tab + 1);
        raw.num_classes = std::max(raw.num_classes, rec.label + 1);
        raw.records.push_back(std::move(rec));
    }
    if (raw.records.empty()) throw DataError(path.string() + ": empty data file");
    return raw;
}

void write_tsv(const std::filesystem::path& path, const RawDataset& raw) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : raw.records) out << r.label << '\t' << r.text << '\n';
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) {
        std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
        words.push_back(std::move(w));
    }
    return words;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
    tokens_ = {"[PAD]", "[UNK]", "[CLS]"};
    for (const auto& w : words) {
        if (ids_.count(w) || w == "[PAD]" || w == "[UNK]" || w == "[CLS]") {
            throw DataError("vocabulary: duplicate or reserved token '" + w + "'");
        }
        tokens_.push_back(w);
        ids_[w] = tokens_.size() - 1;
    }
}

std::size_t Vocabulary::id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
    if (id >= tokens_.size()) throw std::out_of_range("vocabulary id " + std::to_string(id));
    return tokens_[id];
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write vocabulary " + path.string());
    for (std::size_t i = kReserved; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocabulary " + path.string());
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) words.push_back(line);
    }
    return Vocabulary(words);
}

Vocabulary build_vocab(const RawDataset& raw, std::size_t min_freq, std::size_t max_size) {
    if (raw.records.empty()) throw DataError("build_vocab: empty dataset");
    std::map<std::string, std::size_t> counts;
    for (const auto& r : raw.records) {
        for (auto& w : split_words(r.text)) ++counts[w];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [w, c] : counts) {
        if (c >= min_freq) kept.emplace_back(w, c);
    }
    // counts is ordered lexicographically, so a stable sort keeps ties in that order.
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (kept.size() > max_size) kept.resize(max_size);
    std::vector<std::string> words;
    for (auto& [w, c] : kept) words.push_back(w);
    return Vocabulary(words);
}

Tokens tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len) {
    if (max_len < 2) throw std::invalid_argument("tokenize: max_len must be at least 2");
    Tokens out;
    out.ids.assign(max_len, Vocabulary::kPad);
    out.mask.assign(max_len, 0);
    out.ids[0] = Vocabulary::kCls;
    out.mask[0] = 1;
    auto words = split_words(text);
    const std::size_t n = std::min(words.size(), max_len - 1);
    for (std::size_t i = 0; i < n; ++i) {
        out.ids[i + 1] = vocab.id(words[i]);
        out.mask[i + 1] = 1;
    }
    return out;
}

std::string detokenize(const Tokens& tokens, const Vocabulary& vocab) {
    std::string out;
    for (std::size_t i = 1; i < tokens.ids.size(); ++i) {
        if (!tokens.mask[i]) continue;
        if (!out.empty()) out += ' ';
        out += vocab.token(tokens.ids[i]);
    }
    return out;
}

std::vector<std::size_t> Dataset::labels() const {
    std::vector<std::size_t> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(e.label);
    return out;
}

Dataset tokenize_dataset(const RawDataset& raw, const Vocabulary& vocab, std::size_t max_len) {
    Dataset ds;
    ds.num_classes = raw.num_classes;
    ds.examples.reserve(raw.records.size());
    for (std::size_t i = 0; i < raw.records.size(); ++i) {
        auto tok = tokenize(raw.records[i].text, vocab, max_len);
        ds.examples.push_back({i, std::move(tok.ids), std::move(tok.mask), raw.records[i].label});
    }
    return ds;
}

std::string indicator_word(std::size_t cls, std::size_t j) { return "k" + std::to_string(cls) + "_" + std::to_string(j); }

std::string filler_word(std::size_t j) { return "w" + std::to_string(j); }

RawDataset synth_generate(const SynthSpec& spec) {
    const auto [lo, hi] = spec.len_range;
    if (spec.num_classes < 2) throw DataError("synth: need at least two classes");
    if (spec.keywords_per_class == 0) throw DataError("synth: keywords_per_class must be positive");
    if (spec.vocab_size <= spec.num_classes * spec.keywords_per_class) {
        throw DataError("synth: vocab_size " + std::to_string(spec.vocab_size) + " leaves no filler words after " +
                        std::to_string(spec.num_classes * spec.keywords_per_class) + " indicators");
    }
    if (lo < 1 || lo > hi) throw DataError("synth: invalid length range");
    if (spec.num_examples == 0) throw DataError("synth: num_examples must be positive");

    const std::size_t filler_count = spec.vocab_size - spec.num_classes * spec.keywords_per_class;
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<std::size_t> length_dist(lo, hi);
    std::uniform_int_distribution<std::size_t> filler_dist(0, filler_count - 1);
    std::uniform_int_distribution<std::size_t> keyword_dist(0, spec.keywords_per_class - 1);

    RawDataset raw;
    raw.num_classes = spec.num_classes;
    for (std::size_t i = 0; i < spec.num_examples; ++i) {
        const std::size_t label = i % spec.num_classes;
        const std::size_t len = length_dist(rng);
        std::uniform_int_distribution<std::size_t> count_dist(1, std::min<std::size_t>(3, len));
        const std::size_t n_keys = count_dist(rng);
        std::vector<std::size_t> positions(len);
        for (std::size_t p = 0; p < len; ++p) positions[p] = p;
        std::shuffle(positions.begin(), positions.end(), rng);
        std::vector<std::string> words(len);
        for (std::size_t p = 0; p < len; ++p) words[p] = filler_word(filler_dist(rng));
        for (std::size_t k = 0; k < n_keys; ++k) words[positions[k]] = indicator_word(label, keyword_dist(rng));
        std::string text;
        for (const auto& w : words) {
            if (!text.empty()) text += ' ';
            text += w;
        }
        raw.records.push_back({label, std::move(text)});
    }
    std::shuffle(raw.records.begin(), raw.records.end(), rng);
    return raw;
}

}  // namespace advrep::data
