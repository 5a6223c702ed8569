#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "search_nne/artifact.hpp"
#include "search_nne/error.hpp"
#include "search_nne/net.hpp"
#include "search_nne/search_model.hpp"
#include "search_nne/smle.hpp"
#include "search_nne/synth.hpp"
#include "search_nne/trees.hpp"

namespace search_nne {

/// Reads fields of one JSON object and rejects keys it was never asked for.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string context);

  template <class T>
  void optional(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
  }

  template <class T>
  void required(const char* key, T& out) {
    if (!j_.contains(key)) throw ConfigError(context_ + ": missing key '" + key + "'");
    optional(key, out);
  }

  /// Throws ConfigError naming the first key that was never read.
  void finish() const;

 private:
  const nlohmann::json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

void to_json(nlohmann::json& j, const DimRange& r);
void from_json(const nlohmann::json& j, DimRange& r);
void to_json(nlohmann::json& j, const DimMaxima& m);
void from_json(const nlohmann::json& j, DimMaxima& m);
void to_json(nlohmann::json& j, const Dims& d);
void from_json(const nlohmann::json& j, Dims& d);
void to_json(nlohmann::json& j, const PriorConfig& p);
void from_json(const nlohmann::json& j, PriorConfig& p);

void to_json(nlohmann::json& j, const NetSpec& s);
void from_json(const nlohmann::json& j, NetSpec& s);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const TreeConfig& c);
void from_json(const nlohmann::json& j, TreeConfig& c);
void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

void to_json(nlohmann::json& j, const SmleConfig& c);
void from_json(const nlohmann::json& j, SmleConfig& c);

/// Theta as {"beta": [...], "eta": [...], "alpha": [...], "eta0": x, "alpha0": x}.
void to_json(nlohmann::json& j, const Theta& t);
void from_json(const nlohmann::json& j, Theta& t);

}  // namespace search_nne
