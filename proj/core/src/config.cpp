#include "debgcd/config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <variant>
#include <vector>

#include "debgcd/errors.hpp"

namespace debgcd {

namespace {

using Field = std::variant<int Config::*, double Config::*, bool Config::*, std::uint64_t Config::*>;

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> table = {
      {"adapter_hidden", &Config::adapter_hidden},
      {"aug_dropout", &Config::aug_dropout},
      {"aug_noise_sigma", &Config::aug_noise_sigma},
      {"aug_renormalize", &Config::aug_renormalize},
      {"batch_size", &Config::batch_size},
      {"debias_on_gcd_classifier", &Config::debias_on_gcd_classifier},
      {"debias_threshold", &Config::debias_threshold},
      {"enable_adl", &Config::enable_adl},
      {"enable_distribution_guidance", &Config::enable_distribution_guidance},
      {"enable_gcd", &Config::enable_gcd},
      {"enable_sdl", &Config::enable_sdl},
      {"epochs", &Config::epochs},
      {"eval_every", &Config::eval_every},
      {"iterations_per_epoch", &Config::iterations_per_epoch},
      {"labelled_fraction", &Config::labelled_fraction},
      {"lambda_adl", &Config::lambda_adl},
      {"lambda_b", &Config::lambda_b},
      {"lambda_sdl", &Config::lambda_sdl},
      {"lr", &Config::lr},
      {"lr_floor", &Config::lr_floor},
      {"momentum", &Config::momentum},
      {"proj_hidden", &Config::proj_hidden},
      {"rep_dim", &Config::rep_dim},
      {"sdl_dim", &Config::sdl_dim},
      {"seed", &Config::seed},
      {"symmetric_distillation", &Config::symmetric_distillation},
      {"tau_a", &Config::tau_a},
      {"tau_c", &Config::tau_c},
      {"tau_o", &Config::tau_o},
      {"tau_s", &Config::tau_s},
      {"tau_t_end", &Config::tau_t_end},
      {"tau_t_start", &Config::tau_t_start},
      {"tau_t_warmup_epochs", &Config::tau_t_warmup_epochs},
      {"tau_u", &Config::tau_u},
      {"weight_decay", &Config::weight_decay},
      {"xi", &Config::xi},
  };
  return table;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw ConfigError("config key '" + std::string(key) + "': invalid value '" + std::string(value) +
                    "'");
}

void assign(Config& c, std::string_view key, const Field& field, std::string_view value) {
  const std::string v(value);
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(c.*member)>;
        if constexpr (std::is_same_v<T, bool>) {
          if (v == "1" || v == "true") {
            c.*member = true;
          } else if (v == "0" || v == "false") {
            c.*member = false;
          } else {
            bad_value(key, value);
          }
        } else if constexpr (std::is_same_v<T, double>) {
          char* end = nullptr;
          errno = 0;
          const double d = std::strtod(v.c_str(), &end);
          if (v.empty() || end != v.c_str() + v.size() || errno != 0 || !std::isfinite(d)) {
            bad_value(key, value);
          }
          c.*member = d;
        } else {
          T parsed{};
          auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), parsed);
          if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, value);
          c.*member = parsed;
        }
      },
      field);
}

void require(bool ok, const char* key, const char* what) {
  if (!ok) throw ConfigError(std::string("config key '") + key + "': " + what);
}

}  // namespace

void Config::validate() const {
  require(epochs >= 1, "epochs", "must be >= 1");
  require(iterations_per_epoch >= 0, "iterations_per_epoch", "must be >= 0");
  require(batch_size >= 2, "batch_size", "must be >= 2");
  require(labelled_fraction > 0.0 && labelled_fraction < 1.0, "labelled_fraction",
          "must be in (0, 1)");
  require(lr > 0.0, "lr", "must be > 0");
  require(lr_floor >= 0.0 && lr_floor <= lr, "lr_floor", "must be in [0, lr]");
  require(momentum >= 0.0 && momentum < 1.0, "momentum", "must be in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  require(eval_every >= 1, "eval_every", "must be >= 1");
  require(lambda_b >= 0.0 && lambda_b <= 1.0, "lambda_b", "must be in [0, 1]");
  require(lambda_sdl >= 0.0, "lambda_sdl", "must be >= 0");
  require(lambda_adl >= 0.0, "lambda_adl", "must be >= 0");
  require(xi >= 0.0, "xi", "must be >= 0");
  require(tau_s > 0.0, "tau_s", "must be > 0");
  require(tau_t_start > 0.0, "tau_t_start", "must be > 0");
  require(tau_t_end > 0.0, "tau_t_end", "must be > 0");
  require(tau_t_warmup_epochs >= 0, "tau_t_warmup_epochs", "must be >= 0");
  require(tau_u > 0.0, "tau_u", "must be > 0");
  require(tau_c > 0.0, "tau_c", "must be > 0");
  require(tau_o > 0.0, "tau_o", "must be > 0");
  require(tau_a > 0.0, "tau_a", "must be > 0");
  require(debias_threshold > 0.0 && debias_threshold < 1.0, "debias_threshold",
          "must be in (0, 1)");
  require(adapter_hidden >= 0, "adapter_hidden", "must be >= 0");
  require(proj_hidden >= 1, "proj_hidden", "must be >= 1");
  require(rep_dim >= 1, "rep_dim", "must be >= 1");
  require(sdl_dim >= 1, "sdl_dim", "must be >= 1");
  require(aug_noise_sigma >= 0.0, "aug_noise_sigma", "must be >= 0");
  require(aug_dropout >= 0.0 && aug_dropout < 1.0, "aug_dropout", "must be in [0, 1)");
  require(!(enable_adl && enable_distribution_guidance && !enable_sdl),
          "enable_distribution_guidance", "requires enable_sdl=1 when enable_adl=1");
}

std::string Config::to_text() const {
  std::ostringstream os;
  for (const auto& [key, field] : fields()) {
    os << key << '=';
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(this->*member)>;
          if constexpr (std::is_same_v<T, bool>) {
            os << (this->*member ? 1 : 0);
          } else if constexpr (std::is_same_v<T, double>) {
            os << format_double(this->*member);
          } else {
            os << this->*member;
          }
        },
        field);
    os << '\n';
  }
  return os.str();
}

Config parse_config(std::string_view text) {
  Config c;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError("duplicate config key '" + std::string(key) + "'");
    }
    assign(c, key, it->second, value);
  }
  for (const auto& [key, field] : fields()) {
    if (seen.find(key) == seen.end()) throw ConfigError("missing config key '" + key + "'");
  }
  c.validate();
  return c;
}

Config load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str());
}

}  // namespace debgcd
