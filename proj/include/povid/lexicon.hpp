#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "povid/types.hpp"

namespace povid {

// Closed vocabulary with a bijective word <-> id mapping, frozen after
// construction. Ids 0..3 are reserved for <pad>, <bos>, <eos>, <sep>.
class Vocabulary {
public:
    // The fixed lexicon shared by every module: 12 object words, 6 colors,
    // 16 cell tokens, digits and the template words.
    static const Vocabulary& standard();

    explicit Vocabulary(std::vector<std::string> words);

    int size() const { return static_cast<int>(words_.size()); }
    bool contains(const std::string& word) const;
    std::int32_t id(const std::string& word) const;  // throws UnknownWordError
    const std::string& word(std::int32_t id) const;

    // Whitespace tokenizer over the closed lexicon; trailing '.', ':' and ','
    // are split into their own tokens so templated text round-trips.
    TokenSeq tokenize(const std::string& text) const;
    std::string detokenize(const TokenSeq& ids) const;

    // Every object-lexicon token occurrence, with multiplicity (kind -> count).
    std::map<int, int> extract_objects(const TokenSeq& ids) const;

    // Domain token helpers.
    std::int32_t object_token(int kind) const;
    std::int32_t color_token(int color) const;
    std::int32_t cell_token(int row, int col) const;
    std::int32_t digit_token(int digit) const;
    bool is_object_token(std::int32_t id) const;
    bool is_color_token(std::int32_t id) const;
    int kind_of_token(std::int32_t id) const;   // -1 if not an object token
    int color_of_token(std::int32_t id) const;  // -1 if not a color token

    const std::string& object_name(int kind) const;
    const std::string& color_name(int color) const;
    int kind_by_name(const std::string& name) const;   // -1 if unknown
    int color_by_name(const std::string& name) const;  // -1 if unknown

    // JSON array of word strings in id order.
    std::string to_json() const;
    static Vocabulary from_json(const std::string& json_text);

    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::int32_t> ids_;
    std::vector<std::int32_t> object_ids_;  // kind index -> token id
    std::vector<std::int32_t> color_ids_;   // color index -> token id
    std::vector<std::int32_t> cell_ids_;    // row*kGridCols+col -> token id
    std::vector<std::int32_t> digit_ids_;   // digit -> token id
    void index_domain_tokens();
};

// "a" or "an" depending on the first letter of the following word.
const std::string& article_for(const std::string& word);

}  // namespace povid
