#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <string>
#include <vector>

#include "defemb/error.hpp"
#include "defemb/tokenizer.hpp"

using namespace defemb;

namespace {
std::string tmp_path(const std::string& leaf) {
    return "tmp_tokenizer_" + leaf;
}
}  // namespace

TEST_CASE("pretokenize splits on word boundaries and reassembles exactly") {
    const std::string text = "aa bb\ncc  dd";
    const std::vector<std::string> chunks = pretokenize(text);
    std::string back;
    for (const auto& c : chunks) back += c;
    CHECK(back == text);
    CHECK(chunks == std::vector<std::string>{"aa", " bb", "\n", "cc", " ", " dd"});
}

TEST_CASE("byte display bijection is injective over all 256 bytes") {
    std::vector<std::string> seen;
    for (int b = 0; b < 256; ++b) {
        const std::string& d = byte_display(static_cast<unsigned char>(b));
        CHECK(!d.empty());
        for (const auto& prev : seen) CHECK(prev != d);
        seen.push_back(d);
    }
    CHECK(byte_display(' ') == "\xC4\xA0");  // U+0120
}

TEST_CASE("training on 'aa aa aa ab' produces the hand-derived merge sequence") {
    // pair counts: (a,a)=3 ties (G,a)=3 -> lexicographically smaller left wins;
    // then (G,aa)=2; then (a,b)=1 ties (G,a)=1 -> (a,b); then (G,ab)=1
    const Tokenizer tok = Tokenizer::train("aa aa aa ab", 300, 2, 7);
    CHECK(tok.num_sentinels() == 2);
    CHECK(tok.num_specials() == 6);
    CHECK(tok.byte_base() == 6);
    CHECK(tok.merged_base() == 262);
    CHECK(tok.vocab_size() == 266);      // 4 merges possible, then no pairs remain
    CHECK_FALSE(tok.reached_target());   // target 300 unreachable on this corpus
    CHECK(tok.merges().size() == 4);

    const int mb = tok.merged_base();
    CHECK(tok.display(mb + 0) == "aa");
    CHECK(tok.display(mb + 1) == "\xC4\xA0" "aa");
    CHECK(tok.display(mb + 2) == "ab");
    CHECK(tok.display(mb + 3) == "\xC4\xA0" "ab");

    CHECK(tok.encode("aa aa aa ab") ==
          std::vector<int>{mb + 0, mb + 1, mb + 1, mb + 3});
    // encode applies merges by rank: " aab" -> [G,a,a,b] -> [G,aa,b] -> [Gaa, b]
    CHECK(tok.encode(" aab") == std::vector<int>{mb + 1, tok.byte_base() + 'b'});
}

TEST_CASE("exact target is reported as reached") {
    const Tokenizer tok = Tokenizer::train("aa aa aa ab", 266, 2, 7);
    CHECK(tok.vocab_size() == 266);
    CHECK(tok.reached_target());
}

TEST_CASE("encode/decode round-trips arbitrary byte strings") {
    const Tokenizer tok = Tokenizer::train("the quick brown fox jumps over the lazy dog", 320, 4, 1);
    for (const std::string s : {std::string("the fox"), std::string("  doubled  spaces "),
                                std::string("caf\xC3\xA9 na\xC3\xAFve"),
                                std::string("line\nbreaks\n\nkept"), std::string("")}) {
        CHECK(tok.decode(tok.encode(s)) == s);
    }
}

TEST_CASE("special ids are laid out as documented") {
    const Tokenizer tok = Tokenizer::train("x y z", 300, 3, 0);
    CHECK(Tokenizer::kPad == 0);
    CHECK(Tokenizer::kMask == 1);
    CHECK(Tokenizer::kBos == 2);
    CHECK(Tokenizer::kEos == 3);
    CHECK(tok.sentinel_id(1) == 4);
    CHECK(tok.sentinel_id(3) == 6);
    CHECK_THROWS_AS((void)tok.sentinel_id(0), Error);
    CHECK_THROWS_AS((void)tok.sentinel_id(4), Error);
    for (int id = 0; id < tok.num_specials(); ++id) {
        CHECK(tok.is_special(id));
        CHECK(tok.bytes(id).empty());
        CHECK(tok.display(id).front() == '<');
    }
    CHECK_FALSE(tok.is_special(tok.byte_base()));
    // specials decode to nothing
    CHECK(tok.decode({Tokenizer::kMask, Tokenizer::kBos}) == "");
}

TEST_CASE("save/load round-trip preserves behavior") {
    const Tokenizer tok = Tokenizer::train("banana bandana ban ana", 290, 2, 3);
    const std::string path = tmp_path("roundtrip.bpe");
    tok.save(path);
    const Tokenizer back = Tokenizer::load(path);
    CHECK(back.vocab_size() == tok.vocab_size());
    CHECK(back.num_sentinels() == tok.num_sentinels());
    CHECK(back.target_vocab_size() == tok.target_vocab_size());
    CHECK(back.merges() == tok.merges());
    for (const std::string s : {"banana", " ban ana", "bandana band"})
        CHECK(back.encode(s) == tok.encode(s));
    std::remove(path.c_str());
    CHECK_THROWS_AS((void)Tokenizer::load(path), Error);
}

TEST_CASE("word_forms builds the four prompt surfaces") {
    const Tokenizer tok = Tokenizer::train("word words wording", 300, 2, 0);
    const Tokenizer::WordTokenization w = tok.word_forms("word");
    CHECK(w.word == "word");
    CHECK(w.word_ids == tok.encode(" word"));
    CHECK(w.k() == w.word_ids.size());
    CHECK(w.bpe_form.text == "word");
    CHECK(w.bpe_form.ids == tok.encode("word"));
    CHECK(w.capitalized.text == "Word");
    CHECK(w.capitalized.ids == tok.encode(" Word"));
    CHECK(w.uppercase.text == "WORD");
    CHECK(w.uppercase.ids == tok.encode(" WORD"));
    CHECK_THROWS_AS((void)tok.word_forms(""), Error);
}

TEST_CASE("training is deterministic and ignores the seed's value") {
    const Tokenizer a = Tokenizer::train("repeat repeat repeated", 290, 2, 1);
    const Tokenizer b = Tokenizer::train("repeat repeat repeated", 290, 2, 99);
    CHECK(a.merges() == b.merges());
    CHECK(a.encode("repeat") == b.encode("repeat"));
}
