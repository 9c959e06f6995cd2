#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tlsleak/random.hpp"
#include "tlsleak/trace.hpp"

namespace tlsleak::testing {

inline Trace make_trace(std::string id, std::vector<NetworkEvent> events,
                        Label label = Label::kNoise, std::string prompt_id = {}) {
  Trace t;
  t.id = std::move(id);
  t.label = label;
  t.prompt_id = prompt_id.empty() ? t.id : std::move(prompt_id);
  t.events = std::move(events);
  return t;
}

// Random valid trace: first dt 0, positive sizes, log-normal gaps.
inline Trace random_trace(Rng& rng, const std::string& id, std::size_t max_events = 40,
                          std::int64_t max_size = 400) {
  std::vector<NetworkEvent> ev;
  const std::size_t n = 1 + rng.below(max_events);
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = i == 0 ? 0.0 : (rng.bernoulli(0.1) ? 0.0 : rng.lognormal(-3.5, 1.0));
    ev.push_back({dt, rng.uniform_int(1, max_size)});
  }
  return make_trace(id, std::move(ev), rng.bernoulli(0.3) ? Label::kTarget : Label::kNoise);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("tlsleak-" + tag + "-" + std::to_string(fnv1a64(tag) ^ counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static std::uint64_t& counter() {
    static std::uint64_t c = 0;
    return c;
  }
  std::filesystem::path path_;
};

}  // namespace tlsleak::testing
