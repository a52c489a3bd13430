#include "airlab/hierarchy.hpp"

#include <stdexcept>

namespace airlab {

const char* mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::None: return "none";
    case Mechanism::Delimiters: return "delimiters";
    case Mechanism::Ise: return "ise";
    case Mechanism::Air: return "air";
  }
  throw std::invalid_argument("mechanism_name: unknown variant");
}

Mechanism mechanism_from_name(const std::string& name) {
  if (name == "none") return Mechanism::None;
  if (name == "delimiters") return Mechanism::Delimiters;
  if (name == "ise") return Mechanism::Ise;
  if (name == "air") return Mechanism::Air;
  throw std::invalid_argument("mechanism: unknown name '" + name +
                              "' (expected none|delimiters|ise|air)");
}

std::vector<int> tokenize(const std::string& text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

std::string detokenize(const std::vector<int>& ids) {
  std::string text;
  text.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= 256) {
      throw std::out_of_range("detokenize: id " + std::to_string(id) + " is not a byte");
    }
    text.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return text;
}

namespace {

void push_token(TaggedSequence& seq, int id, int level) {
  seq.token_ids.push_back(id);
  seq.levels.push_back(level);
}

void push_bytes(TaggedSequence& seq, const std::string& text, int level) {
  for (unsigned char c : text) push_token(seq, static_cast<int>(c), level);
}

}  // namespace

TaggedSequence render_chat_template(const std::string& instruction,
                                    const std::optional<std::string>& data,
                                    const std::optional<std::string>& response,
                                    Mechanism mechanism) {
  if (instruction.empty()) {
    throw std::invalid_argument("render: empty instruction");
  }
  if (response && response->empty()) {
    throw std::invalid_argument("render: empty response (ill-formed training example)");
  }
  const bool delims = mechanism == Mechanism::Delimiters;
  TaggedSequence seq;
  push_token(seq, kTokBos, kLevelInstruction);

  if (delims) push_token(seq, kTokInst, kLevelInstruction);
  push_bytes(seq, kInstHeader, kLevelInstruction);
  seq.instruction_begin = seq.size();
  push_bytes(seq, instruction, kLevelInstruction);
  seq.instruction_end = seq.size();
  push_bytes(seq, "\n", kLevelInstruction);

  if (data) {
    if (delims) push_token(seq, kTokInpt, kLevelData);
    push_bytes(seq, kDataHeader, kLevelData);
    seq.data_begin = seq.size();
    push_bytes(seq, *data, kLevelData);
    seq.data_end = seq.size();
    push_bytes(seq, "\n", kLevelData);
  }

  if (response) {
    push_bytes(seq, kRespHeader, kLevelResponse);
    seq.response_begin = seq.size();
    push_bytes(seq, *response, kLevelResponse);
    seq.response_end = seq.size();
    push_token(seq, kTokEos, kLevelResponse);
  }

  seq.response_mask.reserve(seq.levels.size());
  for (int lvl : seq.levels) {
    seq.response_mask.push_back(static_cast<uint8_t>(lvl == kLevelResponse));
  }
  return seq;
}

}  // namespace airlab
