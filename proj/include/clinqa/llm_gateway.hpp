#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "clinqa/corpus.hpp"

namespace clinqa {

/// One sampling call. sample_index distinguishes repeated identical prompts
/// so each self-consistency draw is individually cacheable.
struct GenerationRequest {
  std::string system_prompt;
  std::string user_prompt;
  double temperature = 0.0;      // [0, 2]
  int max_output_tokens = 256;   // >= 1
  int sample_index = 0;          // >= 0

  void validate() const;
};

/// Connection settings for one remote chat-completions endpoint.
struct BackendProfile {
  std::string endpoint;  // base URL, e.g. "http://host:8000"
  std::string model_name;
  std::chrono::milliseconds request_timeout{60000};
  int max_retries = 2;
  int max_in_flight = 4;
  std::chrono::milliseconds backoff_base{250};  // doubles per retry
  std::string api_key_env = "CLINQA_API_KEY";
};

/// Anything that can turn a prompt into text.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const GenerationRequest& request) = 0;
  virtual std::string model_name() const = 0;

  /// Number of completions actually produced (cache hits never reach here).
  std::uint64_t calls() const { return calls_.load(); }

 protected:
  void count_call() { calls_.fetch_add(1); }

 private:
  std::atomic<std::uint64_t> calls_{0};
};

/// OpenAI-style chat-completions client with bounded exponential-backoff
/// retries. Reads the bearer token from the environment variable named in
/// the profile, when set.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(BackendProfile profile);
  std::string complete(const GenerationRequest& request) override;
  std::string model_name() const override { return profile_.model_name; }

 private:
  BackendProfile profile_;
  std::string host_;  // scheme://host:port
  std::string path_;  // request path
};

// ---- mock backends --------------------------------------------------------

struct ScriptedEntry {
  std::string match;                   // substring of the user prompt
  std::vector<std::string> responses;  // indexed by sample_index
  bool cycle = false;                  // wrap sample_index instead of clamping
};

enum class MockMode { scripted, noisy_oracle };

/// Declarative mock description, loadable from a JSON file.
struct MockScript {
  MockMode mode = MockMode::scripted;

  // scripted
  std::vector<ScriptedEntry> entries;
  std::optional<std::string> default_response;

  // noisy_oracle: row-stochastic confusion over (essential, supplementary,
  // not-relevant), applied to the gold label of the sentence being asked
  // about.
  std::array<std::array<double, 3>, 3> confusion{};
  std::uint64_t seed = 0;

  void validate() const;

  static MockScript scripted(std::vector<ScriptedEntry> entries,
                             std::optional<std::string> default_response = std::nullopt);
  /// Symmetric confusion: stay on the gold label with probability
  /// 1 - flip_rate, otherwise move to either other class with flip_rate/2.
  static MockScript noisy_oracle(double flip_rate, std::uint64_t seed);
  static MockScript from_json_file(const std::string& path);
};

/// Replays scripted responses keyed by user-prompt substring match; first
/// matching entry wins.
class ScriptedMockBackend : public Backend {
 public:
  explicit ScriptedMockBackend(MockScript script);
  std::string complete(const GenerationRequest& request) override;
  std::string model_name() const override { return "mock:scripted"; }

 private:
  MockScript script_;
};

/// Answers classification prompts with the gold label of the target
/// sentence, perturbed by the script's confusion matrix; deterministic in
/// (seed, case, sentence, sample_index) regardless of scheduling. Prompts
/// that do not look like classification requests are echoed back verbatim,
/// which acts as a lossless extractive summarizer in end-to-end tests.
class NoisyOracleMockBackend : public Backend {
 public:
  NoisyOracleMockBackend(MockScript script, const std::vector<CaseRecord>& cases);
  std::string complete(const GenerationRequest& request) override;
  std::string model_name() const override { return "mock:oracle"; }

 private:
  struct GoldEntry {
    std::string case_id;
    int sentence_id = 0;
    RelevanceLabel label = RelevanceLabel::not_relevant;
  };

  MockScript script_;
  // (question \x1f sentence text) -> gold entry
  std::map<std::string, GoldEntry> gold_;
};

/// Builds a mock backend from a CLI-style spec: "scripted:PATH" or
/// "oracle:RATE". Oracle mocks read gold labels from `cases`.
std::unique_ptr<Backend> make_mock_backend(const std::string& spec,
                                           const std::vector<CaseRecord>& cases,
                                           std::uint64_t seed);

// ---- cache ----------------------------------------------------------------

struct CacheKey {
  std::string model;
  std::string prompt_hash;
  std::string temperature;  // canonical decimal rendering
  int sample_index = 0;

  auto operator<=>(const CacheKey&) const = default;
};

/// Thread-safe response cache persisted as one JSON record per line.
/// Writes are last-write-wins; values for identical keys are identical by
/// construction.
class ResponseCache {
 public:
  static std::shared_ptr<ResponseCache> load(const std::string& path);  // missing file -> empty

  std::optional<std::string> get(const CacheKey& key) const;
  void put(const CacheKey& key, std::string response);

  /// Writes all entries in sorted key order (atomic replace), so repeated
  /// runs produce identical cache files.
  void save(const std::string& path) const;
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<CacheKey, std::string> entries_;
};

/// Binds one backend to an optional shared cache and provides the sampling
/// contract used by the pipeline stages.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, std::shared_ptr<ResponseCache> cache = nullptr,
          int max_in_flight = 1);

  /// Cache-aware single completion.
  std::string complete(const GenerationRequest& request);

  /// n completions with sample_index 0..n-1, at most max_in_flight issued
  /// concurrently; output order matches sample index. A terminal failure in
  /// any sub-request raises an aggregate error naming the failed indices.
  std::vector<std::string> sample_n(const std::string& system_prompt,
                                    const std::string& user_prompt, int n, double temperature,
                                    int max_output_tokens);

  std::uint64_t backend_calls() const { return backend_->calls(); }
  Backend& backend() { return *backend_; }

 private:
  std::shared_ptr<Backend> backend_;
  std::shared_ptr<ResponseCache> cache_;
  int max_in_flight_ = 1;
};

/// Canonical decimal rendering used in cache keys (shortest round-trip).
std::string format_temperature(double t);

}  // namespace clinqa
