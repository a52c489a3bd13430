#ifndef AIRLAB_HIERARCHY_HPP_
#define AIRLAB_HIERARCHY_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace airlab {

// Byte-level vocabulary: ids 0..255 are raw bytes, then four specials.
inline constexpr int kTokInst = 256;  // marks start of instruction segment (Delimiters)
inline constexpr int kTokInpt = 257;  // marks start of data segment (Delimiters)
inline constexpr int kTokBos = 258;
inline constexpr int kTokEos = 259;
inline constexpr int kVocabSize = 260;

// Privilege levels, most privileged first: instruction > data > response.
inline constexpr int kLevelInstruction = 0;
inline constexpr int kLevelData = 1;
inline constexpr int kLevelResponse = 2;
inline constexpr int kNumLevels = 3;

inline constexpr const char* kInstHeader = "#inst\n";
inline constexpr const char* kDataHeader = "#data\n";
inline constexpr const char* kRespHeader = "#resp\n";

enum class Mechanism { None, Delimiters, Ise, Air };

const char* mechanism_name(Mechanism m);
Mechanism mechanism_from_name(const std::string& name);

// A rendered chat sequence: one privilege level per token, response_mask true
// exactly where the level is the response level. Segment content spans
// (excluding headers and specials) are token index ranges, -1 when absent;
// with the byte tokenizer they let callers map byte offsets to positions.
struct TaggedSequence {
  std::vector<int> token_ids;
  std::vector<int> levels;
  std::vector<uint8_t> response_mask;
  int instruction_begin = -1, instruction_end = -1;
  int data_begin = -1, data_end = -1;
  int response_begin = -1, response_end = -1;

  int size() const { return static_cast<int>(token_ids.size()); }
};

std::vector<int> tokenize(const std::string& text);

// Inverse of tokenize; rejects special tokens and out-of-range ids.
std::string detokenize(const std::vector<int>& ids);

// Renders [BOS] + instruction segment + optional data segment + optional
// response segment. Each segment is a fixed role header followed by its
// content; header tokens carry the level of the segment they open. Under
// Delimiters, [INST] / [INPT] open the instruction / data segments. The
// response segment ends with [EOS].
TaggedSequence render_chat_template(const std::string& instruction,
                                    const std::optional<std::string>& data,
                                    const std::optional<std::string>& response,
                                    Mechanism mechanism);

}  // namespace airlab

#endif  // AIRLAB_HIERARCHY_HPP_
