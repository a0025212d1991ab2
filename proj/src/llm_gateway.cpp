#include "clinqa/llm_gateway.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "clinqa/error.hpp"
#include "clinqa/util.hpp"

namespace clinqa {

using nlohmann::json;

namespace {

/// Model output sometimes deserves a timeout-specific error.
class TimeoutError : public BackendError {
 public:
  explicit TimeoutError(const std::string& what) : BackendError(what, 0) {}
};

}  // namespace

void GenerationRequest::validate() const {
  if (temperature < 0.0 || temperature > 2.0) {
    throw ContractError("generation request: temperature must be in [0, 2]");
  }
  if (max_output_tokens < 1) {
    throw ContractError("generation request: max_output_tokens must be positive");
  }
  if (sample_index < 0) {
    throw ContractError("generation request: sample_index must be non-negative");
  }
}

std::string format_temperature(double t) { return json(t).dump(); }

// ---- HttpBackend -----------------------------------------------------------

namespace {

void split_endpoint(const std::string& endpoint, std::string& host, std::string& path) {
  const std::size_t scheme_end = endpoint.find("://");
  const std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const std::size_t slash = endpoint.find('/', host_start);
  if (slash == std::string::npos) {
    host = endpoint;
    path = "/v1/chat/completions";
    return;
  }
  host = endpoint.substr(0, slash);
  path = endpoint.substr(slash);
  while (path.size() > 1 && path.back() == '/') path.pop_back();
  if (path.empty() || path == "/") path = "/v1/chat/completions";
}

bool is_retryable_status(int status) { return status == 429 || status >= 500; }

std::string extract_completion_text(const std::string& body) {
  json parsed = json::parse(body, nullptr, false);
  if (parsed.is_discarded() || !parsed.contains("choices") || !parsed["choices"].is_array() ||
      parsed["choices"].empty()) {
    throw BackendError("malformed completion response body");
  }
  const json& choice = parsed["choices"][0];
  if (!choice.contains("message") || !choice["message"].contains("content") ||
      !choice["message"]["content"].is_string()) {
    throw BackendError("completion response missing message content");
  }
  return choice["message"]["content"].get<std::string>();
}

}  // namespace

HttpBackend::HttpBackend(BackendProfile profile) : profile_(std::move(profile)) {
  if (profile_.endpoint.empty()) throw ContractError("http backend requires an endpoint URL");
  if (profile_.max_retries < 0) throw ContractError("http backend: max_retries must be >= 0");
  if (profile_.max_in_flight < 1) throw ContractError("http backend: max_in_flight must be >= 1");
  split_endpoint(profile_.endpoint, host_, path_);
}

std::string HttpBackend::complete(const GenerationRequest& request) {
  request.validate();
  count_call();

  json body;
  body["model"] = profile_.model_name;
  json messages = json::array();
  if (!request.system_prompt.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system_prompt}});
  }
  messages.push_back({{"role", "user"}, {"content", request.user_prompt}});
  body["messages"] = std::move(messages);
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_output_tokens;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (const char* key = std::getenv(profile_.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  const int attempts = profile_.max_retries + 1;
  int last_status = 0;
  bool last_was_timeout = false;
  std::string last_detail;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(profile_.backoff_base * (1LL << (attempt - 1)));
    }
    httplib::Client client(host_);
    const auto timeout = profile_.request_timeout;
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                                  (timeout % std::chrono::seconds(1)).count() * 1000);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Result res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_was_timeout = res.error() == httplib::Error::ConnectionTimeout ||
                         res.error() == httplib::Error::Read || res.error() == httplib::Error::Write;
      last_detail = httplib::to_string(res.error());
      last_status = 0;
      continue;  // transport failures are retryable
    }
    last_status = res->status;
    last_was_timeout = false;
    if (res->status == 200) return extract_completion_text(res->body);
    last_detail = res->body.substr(0, 200);
    if (!is_retryable_status(res->status)) break;
  }

  std::ostringstream msg;
  msg << "backend " << profile_.model_name << " at " << profile_.endpoint << " failed after "
      << attempts << " attempt(s)";
  if (last_status != 0) msg << " (HTTP " << last_status << ")";
  if (!last_detail.empty()) msg << ": " << last_detail;
  if (last_was_timeout) throw TimeoutError(msg.str() + " [timeout]");
  throw BackendError(msg.str(), last_status);
}

// ---- MockScript ------------------------------------------------------------

void MockScript::validate() const {
  if (mode == MockMode::scripted) {
    for (const ScriptedEntry& entry : entries) {
      if (entry.match.empty()) throw ContractError("scripted mock entry with empty match");
      if (entry.responses.empty()) throw ContractError("scripted mock entry with no responses");
    }
    return;
  }
  for (const auto& row : confusion) {
    double sum = 0.0;
    for (double p : row) {
      if (p < 0.0 || p > 1.0) throw ContractError("confusion rates must be in [0, 1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ContractError("confusion rows must sum to 1");
  }
}

MockScript MockScript::scripted(std::vector<ScriptedEntry> entries,
                                std::optional<std::string> default_response) {
  MockScript script;
  script.mode = MockMode::scripted;
  script.entries = std::move(entries);
  script.default_response = std::move(default_response);
  script.validate();
  return script;
}

MockScript MockScript::noisy_oracle(double flip_rate, std::uint64_t seed) {
  if (flip_rate < 0.0 || flip_rate > 1.0) throw ContractError("flip rate must be in [0, 1]");
  MockScript script;
  script.mode = MockMode::noisy_oracle;
  script.seed = seed;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      script.confusion[i][j] = i == j ? 1.0 - flip_rate : flip_rate / 2.0;
    }
  }
  script.validate();
  return script;
}

MockScript MockScript::from_json_file(const std::string& path) {
  json doc = json::parse(read_text_file(path), nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("mode")) {
    throw Error("mock script file must be a JSON object with a \"mode\" field: " + path);
  }
  const std::string mode = doc["mode"].get<std::string>();
  if (mode == "scripted") {
    MockScript script;
    script.mode = MockMode::scripted;
    for (const json& e : doc.value("entries", json::array())) {
      ScriptedEntry entry;
      entry.match = e.at("match").get<std::string>();
      if (e.contains("responses")) {
        for (const json& r : e["responses"]) entry.responses.push_back(r.get<std::string>());
      } else if (e.contains("response")) {
        entry.responses.push_back(e["response"].get<std::string>());
      }
      entry.cycle = e.value("cycle", false);
      script.entries.push_back(std::move(entry));
    }
    if (doc.contains("default")) script.default_response = doc["default"].get<std::string>();
    script.validate();
    return script;
  }
  if (mode == "noisy_oracle") {
    if (doc.contains("confusion")) {
      MockScript script;
      script.mode = MockMode::noisy_oracle;
      script.seed = doc.value("seed", 0ULL);
      static const char* kNames[3] = {"essential", "supplementary", "not-relevant"};
      for (std::size_t i = 0; i < 3; ++i) {
        const json& row = doc["confusion"].at(kNames[i]);
        for (std::size_t j = 0; j < 3; ++j) script.confusion[i][j] = row.at(kNames[j]).get<double>();
      }
      script.validate();
      return script;
    }
    return noisy_oracle(doc.value("flip_rate", 0.0), doc.value("seed", 0ULL));
  }
  throw Error("unknown mock mode \"" + mode + "\" in " + path);
}

// ---- ScriptedMockBackend ----------------------------------------------------

ScriptedMockBackend::ScriptedMockBackend(MockScript script) : script_(std::move(script)) {
  script_.validate();
  if (script_.mode != MockMode::scripted) throw ContractError("script is not in scripted mode");
}

std::string ScriptedMockBackend::complete(const GenerationRequest& request) {
  request.validate();
  count_call();
  for (const ScriptedEntry& entry : script_.entries) {
    if (request.user_prompt.find(entry.match) == std::string::npos) continue;
    const std::size_t n = entry.responses.size();
    const std::size_t index = entry.cycle ? static_cast<std::size_t>(request.sample_index) % n
                                          : std::min(static_cast<std::size_t>(request.sample_index), n - 1);
    return entry.responses[index];
  }
  if (script_.default_response) return *script_.default_response;
  throw BackendError("scripted mock has no entry matching the prompt");
}

// ---- NoisyOracleMockBackend --------------------------------------------------

namespace {

std::string gold_key(std::string_view question, std::string_view text) {
  std::string key(question);
  key.push_back('\x1f');
  key.append(text);
  return key;
}

// Uniform double in [0, 1) from the top 53 bits of the stream.
double next_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

NoisyOracleMockBackend::NoisyOracleMockBackend(MockScript script,
                                               const std::vector<CaseRecord>& cases)
    : script_(std::move(script)) {
  script_.validate();
  if (script_.mode != MockMode::noisy_oracle) throw ContractError("script is not an oracle mock");
  for (const CaseRecord& rec : cases) {
    if (!rec.gold_labels) continue;
    for (const NoteSentence& sentence : rec.sentences) {
      GoldEntry entry{rec.case_id, sentence.sentence_id, rec.gold_labels->at(sentence.sentence_id)};
      gold_.emplace(gold_key(rec.clinician_question, sentence.text), std::move(entry));
    }
  }
}

std::string NoisyOracleMockBackend::complete(const GenerationRequest& request) {
  request.validate();
  count_call();
  const std::string& user = request.user_prompt;

  // Classification prompts end with a blank "Label:"; anything else is a
  // summarization request and is echoed back unchanged.
  static const std::string kTail = "\nLabel:";
  if (user.size() < kTail.size() || user.compare(user.size() - kTail.size(), kTail.size(), kTail) != 0) {
    return user;
  }

  const std::size_t context_pos = user.rfind("Context: ");
  const std::size_t question_pos = user.rfind("Question: ", context_pos);
  if (context_pos == std::string::npos || question_pos == std::string::npos) {
    throw BackendError("oracle mock could not locate the target block in the prompt");
  }
  const std::string question =
      user.substr(question_pos + 10, context_pos - (question_pos + 10) - 1);
  const std::string context =
      user.substr(context_pos + 9, user.size() - kTail.size() - (context_pos + 9));

  const auto it = gold_.find(gold_key(question, context));
  if (it == gold_.end()) {
    throw BackendError("oracle mock has no gold label for the prompted sentence");
  }

  std::mt19937_64 rng(SeedMixer(script_.seed)
                          .mix("oracle")
                          .mix(it->second.case_id)
                          .mix(static_cast<std::uint64_t>(it->second.sentence_id))
                          .mix(static_cast<std::uint64_t>(request.sample_index))
                          .value());
  const auto& row = script_.confusion[static_cast<std::size_t>(it->second.label)];
  const double u = next_unit(rng);
  double cumulative = 0.0;
  std::size_t drawn = 2;
  for (std::size_t j = 0; j < 3; ++j) {
    cumulative += row[j];
    if (u < cumulative) {
      drawn = j;
      break;
    }
  }
  return std::string(to_string(static_cast<RelevanceLabel>(drawn)));
}

std::unique_ptr<Backend> make_mock_backend(const std::string& spec,
                                           const std::vector<CaseRecord>& cases,
                                           std::uint64_t seed) {
  const std::size_t colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  if (kind == "scripted") {
    if (arg.empty()) throw Error("mock spec \"scripted:\" requires a file path");
    MockScript script = MockScript::from_json_file(arg);
    if (script.mode == MockMode::noisy_oracle) {
      if (script.seed == 0) script.seed = seed;
      return std::make_unique<NoisyOracleMockBackend>(script, cases);
    }
    return std::make_unique<ScriptedMockBackend>(std::move(script));
  }
  if (kind == "oracle") {
    const double rate = arg.empty() ? 0.0 : std::stod(arg);
    return std::make_unique<NoisyOracleMockBackend>(MockScript::noisy_oracle(rate, seed), cases);
  }
  throw Error("unknown mock spec \"" + spec + "\" (expected scripted:PATH or oracle:RATE)");
}

// ---- ResponseCache -----------------------------------------------------------

std::shared_ptr<ResponseCache> ResponseCache::load(const std::string& path) {
  auto cache = std::make_shared<ResponseCache>();
  std::ifstream in(path);
  if (!in) return cache;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object()) {
      throw ParseError(line_no, "malformed cache record in " + path);
    }
    CacheKey key;
    key.model = record.at("model").get<std::string>();
    key.prompt_hash = record.at("prompt_hash").get<std::string>();
    key.temperature = record.at("temperature").get<std::string>();
    key.sample_index = record.at("sample_index").get<int>();
    cache->entries_[key] = record.at("response").get<std::string>();
  }
  return cache;
}

std::optional<std::string> ResponseCache::get(const CacheKey& key) const {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::put(const CacheKey& key, std::string response) {
  std::lock_guard<std::mutex> lock(mutex_);
  entries_[key] = std::move(response);
}

void ResponseCache::save(const std::string& path) const {
  std::ostringstream out;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    for (const auto& [key, response] : entries_) {
      json record;
      record["model"] = key.model;
      record["prompt_hash"] = key.prompt_hash;
      record["temperature"] = key.temperature;
      record["sample_index"] = key.sample_index;
      record["response"] = response;
      out << record.dump() << '\n';
    }
  }
  const std::string tmp = path + ".tmp";
  write_text_file(tmp, out.str());
  std::filesystem::rename(tmp, path);
}

std::size_t ResponseCache::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return entries_.size();
}

// ---- Gateway ------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Backend> backend, std::shared_ptr<ResponseCache> cache,
                 int max_in_flight)
    : backend_(std::move(backend)), cache_(std::move(cache)), max_in_flight_(max_in_flight) {
  if (!backend_) throw ContractError("gateway requires a backend");
  if (max_in_flight_ < 1) throw ContractError("gateway: max_in_flight must be >= 1");
}

std::string Gateway::complete(const GenerationRequest& request) {
  request.validate();
  CacheKey key;
  key.model = backend_->model_name();
  std::string prompt;
  prompt.reserve(request.system_prompt.size() + request.user_prompt.size() + 1);
  prompt += request.system_prompt;
  prompt.push_back('\x1f');
  prompt += request.user_prompt;
  key.prompt_hash = fnv1a64_hex(prompt);
  key.temperature = format_temperature(request.temperature);
  key.sample_index = request.sample_index;

  if (cache_) {
    if (auto hit = cache_->get(key)) return *hit;
  }
  std::string response = backend_->complete(request);
  if (cache_) cache_->put(key, response);
  return response;
}

std::vector<std::string> Gateway::sample_n(const std::string& system_prompt,
                                           const std::string& user_prompt, int n,
                                           double temperature, int max_output_tokens) {
  if (n < 1) throw ContractError("sample_n: n must be >= 1");
  std::vector<std::string> outputs(static_cast<std::size_t>(n));
  std::vector<std::string> failures(static_cast<std::size_t>(n));
  std::atomic<bool> any_failed{false};

  parallel_for_index(static_cast<std::size_t>(n), max_in_flight_, [&](std::size_t i) {
    GenerationRequest request;
    request.system_prompt = system_prompt;
    request.user_prompt = user_prompt;
    request.temperature = temperature;
    request.max_output_tokens = max_output_tokens;
    request.sample_index = static_cast<int>(i);
    try {
      outputs[i] = complete(request);
    } catch (const std::exception& e) {
      failures[i] = e.what();
      any_failed.store(true);
    }
  });

  if (any_failed.load()) {
    std::string indices;
    std::string first_error;
    for (std::size_t i = 0; i < failures.size(); ++i) {
      if (failures[i].empty()) continue;
      if (!indices.empty()) indices += ",";
      indices += std::to_string(i);
      if (first_error.empty()) first_error = failures[i];
    }
    throw BackendError("samples failed at indices [" + indices + "]: " + first_error);
  }
  return outputs;
}

}  // namespace clinqa
