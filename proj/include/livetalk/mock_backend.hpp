#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <unordered_map>

#include "livetalk/backend.hpp"
#include "livetalk/codec.hpp"

namespace livetalk {

/// One possible next event, relative to the previous event's time.
struct ContinuationTemplate {
  Micros gap = 0;
  char speaker = 'A';
  std::string text;
  double weight = 1.0;
};

/// Event-level script for the mock backend. The next event is drawn from
/// `after_text[last message]`, else `after[last speaker]`, else
/// `continuations`.
struct MockScript {
  Format format = Format::messenger;
  std::string tokenizer = "bytes";
  Micros origin = 0;  // messenger time of the first event's gap base
  std::vector<ContinuationTemplate> continuations;
  std::map<char, std::vector<ContinuationTemplate>> after;
  std::map<std::string, std::vector<ContinuationTemplate>> after_text;
};

MockScript parse_mock_script(std::string_view json_text);
MockScript load_mock_script(const std::filesystem::path& path);

/// Token-level view of a MockScript: the mass of each template whose
/// canonical rendering extends the text since the last entry boundary is
/// assigned to the longest vocabulary piece continuing it. Prefixes no
/// template explains get the uniform distribution.
class TemplateBackend final : public Backend {
 public:
  explicit TemplateBackend(MockScript script);
  TemplateBackend(MockScript script, SharedTokenizer tokenizer);

  const Tokenizer& tokenizer() const override { return *tokenizer_; }
  void next_logprobs(std::span<const TokenId> prefix, TokenDistribution& out) const override;
  std::string describe() const override { return "mock"; }

  const MockScript& script() const { return script_; }

 private:
  struct Boundary {
    CodecState state;
    char last_speaker = 0;
    std::string last_text;
  };

  Boundary boundary_for(std::string_view text) const;

  MockScript script_;
  SharedTokenizer tokenizer_;
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, Boundary> boundaries_;
};

}  // namespace livetalk
