#include "povid/lexicon.hpp"

#include <array>
#include <sstream>

#include "povid/errors.hpp"

#include "json.hpp"

namespace povid {

namespace {

const std::array<const char*, kNumKinds> kObjectNames = {
    "fork", "knife", "plate", "cup",    "bowl", "spoon",
    "apple", "banana", "bottle", "dog", "cat",  "chair"};

const std::array<const char*, kNumColors> kColorNames = {
    "red", "green", "blue", "yellow", "black", "white"};

bool is_punct_word(const std::string& w) {
    return w == "." || w == ":" || w == ",";
}

std::vector<std::string> standard_words() {
    std::vector<std::string> words = {"<pad>", "<bos>", "<eos>", "<sep>"};
    for (const char* w : kObjectNames) words.emplace_back(w);
    for (const char* w : kColorNames) words.emplace_back(w);
    for (int r = 0; r < kGridRows; ++r)
        for (int c = 0; c < kGridCols; ++c)
            words.push_back("(" + std::to_string(r) + "," + std::to_string(c) + ")");
    for (int d = 0; d <= 9; ++d) words.push_back(std::to_string(d));
    for (const char* w :
         {"in",    "the",    "image",  "is",    "are",   "there", "a",
          "an",    "and",    "at",     "empty", "yes",   "no",    "reason",
          "result", "more",  "than",   "how",   "many",  "where", "relative",
          "to",    "of",     "left",   "right", "above", "below", "describe",
          ".",     ":",      ","})
        words.emplace_back(w);
    return words;
}

}  // namespace

const Vocabulary& Vocabulary::standard() {
    static const Vocabulary vocab(standard_words());
    return vocab;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
    if (words_.size() < 4 || words_[0] != "<pad>" || words_[1] != "<bos>" ||
        words_[2] != "<eos>" || words_[3] != "<sep>")
        throw ConfigError("vocabulary must start with <pad>, <bos>, <eos>, <sep>");
    if (words_.size() > 256) throw ConfigError("vocabulary larger than 256 words");
    for (std::size_t i = 0; i < words_.size(); ++i) {
        auto [it, inserted] = ids_.emplace(words_[i], static_cast<std::int32_t>(i));
        if (!inserted) throw ConfigError("duplicate word in vocabulary: " + words_[i]);
    }
    index_domain_tokens();
}

void Vocabulary::index_domain_tokens() {
    object_ids_.clear();
    for (const char* w : kObjectNames) {
        auto it = ids_.find(w);
        if (it == ids_.end()) throw ConfigError(std::string("vocabulary lacks object word ") + w);
        object_ids_.push_back(it->second);
    }
    color_ids_.clear();
    for (const char* w : kColorNames) {
        auto it = ids_.find(w);
        if (it == ids_.end()) throw ConfigError(std::string("vocabulary lacks color word ") + w);
        color_ids_.push_back(it->second);
    }
    cell_ids_.clear();
    for (int r = 0; r < kGridRows; ++r)
        for (int c = 0; c < kGridCols; ++c) {
            std::string w = "(" + std::to_string(r) + "," + std::to_string(c) + ")";
            auto it = ids_.find(w);
            if (it == ids_.end()) throw ConfigError("vocabulary lacks cell word " + w);
            cell_ids_.push_back(it->second);
        }
    digit_ids_.clear();
    for (int d = 0; d <= 9; ++d) {
        auto it = ids_.find(std::to_string(d));
        if (it == ids_.end()) throw ConfigError("vocabulary lacks digit " + std::to_string(d));
        digit_ids_.push_back(it->second);
    }
}

bool Vocabulary::contains(const std::string& word) const { return ids_.count(word) > 0; }

std::int32_t Vocabulary::id(const std::string& word) const {
    auto it = ids_.find(word);
    if (it == ids_.end()) throw UnknownWordError(word);
    return it->second;
}

const std::string& Vocabulary::word(std::int32_t id) const {
    if (id < 0 || id >= size()) throw ConfigError("token id out of range: " + std::to_string(id));
    return words_[static_cast<std::size_t>(id)];
}

TokenSeq Vocabulary::tokenize(const std::string& text) const {
    TokenSeq out;
    std::istringstream in(text);
    std::string chunk;
    while (in >> chunk) {
        std::string punct;
        while (chunk.size() > 1 &&
               (chunk.back() == '.' || chunk.back() == ':' || chunk.back() == ',')) {
            punct.insert(punct.begin(), chunk.back());
            chunk.pop_back();
        }
        out.push_back(id(chunk));
        for (char p : punct) out.push_back(id(std::string(1, p)));
    }
    return out;
}

std::string Vocabulary::detokenize(const TokenSeq& ids) const {
    std::string out;
    for (std::int32_t t : ids) {
        const std::string& w = word(t);
        if (!out.empty() && !is_punct_word(w)) out += ' ';
        out += w;
    }
    return out;
}

std::map<int, int> Vocabulary::extract_objects(const TokenSeq& ids) const {
    std::map<int, int> counts;
    for (std::int32_t t : ids) {
        const int kind = kind_of_token(t);
        if (kind >= 0) ++counts[kind];
    }
    return counts;
}

std::int32_t Vocabulary::object_token(int kind) const { return object_ids_.at(kind); }
std::int32_t Vocabulary::color_token(int color) const { return color_ids_.at(color); }
std::int32_t Vocabulary::cell_token(int row, int col) const {
    return cell_ids_.at(row * kGridCols + col);
}
std::int32_t Vocabulary::digit_token(int digit) const { return digit_ids_.at(digit); }

bool Vocabulary::is_object_token(std::int32_t id) const { return kind_of_token(id) >= 0; }
bool Vocabulary::is_color_token(std::int32_t id) const { return color_of_token(id) >= 0; }

int Vocabulary::kind_of_token(std::int32_t id) const {
    for (int k = 0; k < kNumKinds; ++k)
        if (object_ids_[k] == id) return k;
    return -1;
}

int Vocabulary::color_of_token(std::int32_t id) const {
    for (int c = 0; c < kNumColors; ++c)
        if (color_ids_[c] == id) return c;
    return -1;
}

const std::string& Vocabulary::object_name(int kind) const {
    return words_[static_cast<std::size_t>(object_ids_.at(kind))];
}

const std::string& Vocabulary::color_name(int color) const {
    return words_[static_cast<std::size_t>(color_ids_.at(color))];
}

int Vocabulary::kind_by_name(const std::string& name) const {
    for (int k = 0; k < kNumKinds; ++k)
        if (object_name(k) == name) return k;
    return -1;
}

int Vocabulary::color_by_name(const std::string& name) const {
    for (int c = 0; c < kNumColors; ++c)
        if (color_name(c) == name) return c;
    return -1;
}

std::string Vocabulary::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& w : words_) arr.push_back(w);
    return arr.dump();
}

Vocabulary Vocabulary::from_json(const std::string& json_text) {
    nlohmann::json arr = nlohmann::json::parse(json_text);
    if (!arr.is_array()) throw ConfigError("vocabulary JSON must be an array of strings");
    std::vector<std::string> words;
    for (const auto& w : arr) words.push_back(w.get<std::string>());
    return Vocabulary(std::move(words));
}

const std::string& article_for(const std::string& word) {
    static const std::string a = "a";
    static const std::string an = "an";
    if (word.empty()) return a;
    switch (word.front()) {
        case 'a': case 'e': case 'i': case 'o': case 'u':
            return an;
        default:
            return a;
    }
}

}  // namespace povid
