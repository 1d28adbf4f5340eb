#pragma once

// JSON HTTP surface of the scenario engine. ApiService holds the handlers
// as plain functions of (path parameters, query, body) so they can be
// tested without sockets; mount() binds them to an httplib server.

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "tripgen/checkpoint.hpp"
#include "tripgen/dataset.hpp"
#include "tripgen/explain.hpp"
#include "tripgen/scenario.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen's headers.
#include <httplib.h>

namespace tripgen::api {

struct Reply {
  int status = 200;
  nlohmann::json body;
};

inline Reply error_reply(int status, const std::string& message) { return {status, {{"error", message}}}; }

struct ServiceOptions {
  scenario::ScenarioOptions scenario;
  ShapOptions shap;
};

class ApiService {
 public:
  ApiService(const Workspace& ws, const Checkpoint& ckpt, std::filesystem::path store_dir, ServiceOptions opt = {})
      : base_(ws, ckpt), store_(std::move(store_dir)), opt_(opt) {
    const auto& d = base_.data();
    background_ = draw_background(d.features, d.train, opt_.shap.background_size, opt_.shap.seed);
  }

  [[nodiscard]] const scenario::Baseline& baseline() const { return base_; }

  Reply health() const {
    const auto& months = base_.data().months;
    return {200,
            {{"status", "ok"},
             {"variant", to_string(base_.model().config().variant)},
             {"first_month", months.empty() ? "" : months.begin()->first.to_string()},
             {"last_month", months.empty() ? "" : months.rbegin()->first.to_string()}}};
  }

  Reply stations(const std::optional<std::string>& month_text) const {
    return guarded([&]() -> Reply {
      const auto m = month_param(month_text);
      const auto& mb = base_.data().month(m);
      const auto& pred = base_.predictions(m);
      auto list = nlohmann::json::array();
      for (std::size_t i = 0; i < mb.active.size(); ++i) {
        const auto& s = mb.active[i];
        const auto y = scenario::clip(pred[i]);
        list.push_back({{"id", s.id},
                        {"lat", s.lat},
                        {"lon", s.lon},
                        {"first_active_month", s.first_active_month.to_string()},
                        {"y_out", y[0]},
                        {"y_in", y[1]},
                        {"raw_y_out", pred[i][0]},
                        {"raw_y_in", pred[i][1]}});
      }
      return {200, {{"month", m.to_string()}, {"stations", list}}};
    });
  }

  Reply create_scenario(const std::string& body) {
    return guarded([&]() -> Reply {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(body);
      } catch (const nlohmann::json::exception& e) {
        return error_reply(400, std::string("invalid JSON: ") + e.what());
      }
      auto sc = scenario::Scenario::from_json(j);
      if (!sc.id.empty()) scenario::ScenarioStore::check_id(sc.id);
      // Creation and update of one id are serialized; distinct ids run freely.
      auto lock = lock_for(sc.id);
      const auto result = scenario::evaluate(base_, sc, opt_.scenario);
      const auto id = store_.put(sc, scenario::to_json(result));
      return {201, {{"id", id}}};
    });
  }

  Reply scenario_result(const std::string& id) const {
    return guarded([&]() -> Reply {
      auto r = store_.result(id);
      if (!r) return error_reply(404, "unknown scenario " + id);
      return {200, *r};
    });
  }

  Reply attention(const std::string& id, const std::optional<std::string>& month_text) const {
    return guarded([&]() -> Reply {
      const auto m = month_param(month_text);
      const auto& mb = base_.data().month(m);
      if (!mb.is_active(id)) return error_reply(404, "station " + id + " is not active in " + m.to_string());
      const auto edges = export_attention(base_.model(), mb, mb.normalized, 0, base_.input(mb, mb.index_of(id)), id);
      return {200, {{"station_id", id}, {"month", m.to_string()}, {"edges", to_json(std::span<const AttentionEdge>(edges))}}};
    });
  }

  Reply attribution(const std::string& id, const std::optional<std::string>& month_text) {
    return guarded([&]() -> Reply {
      const auto m = month_param(month_text);
      const auto& mb = base_.data().month(m);
      if (!mb.is_active(id)) return error_reply(404, "station " + id + " is not active in " + m.to_string());
      const auto key = id + "@" + m.to_string();
      {
        std::lock_guard lock(cache_mutex_);
        if (auto it = explanations_.find(key); it != explanations_.end()) return {200, it->second};
      }
      const auto& data = base_.data();
      const auto ex = explain_sample(base_.model(), data.scalers, data.features, data.input_for(id, m), id, m,
                                     background_, opt_.shap, data.config.features);
      auto j = to_json(ex);
      std::lock_guard lock(cache_mutex_);
      explanations_.emplace(key, j);
      return {200, j};
    });
  }

 private:
  static YearMonth month_param(const std::optional<std::string>& text) {
    if (!text || text->empty()) throw scenario::ScenarioError("query parameter month=YYYY-MM is required");
    return YearMonth::parse(*text);
  }

  template <class F>
  static Reply guarded(F&& f) {
    try {
      return f();
    } catch (const scenario::ScenarioError& e) {
      return error_reply(400, e.what());
    } catch (const ConfigError& e) {
      return error_reply(400, e.what());
    } catch (const std::invalid_argument& e) {
      return error_reply(400, e.what());
    } catch (const DataError& e) {
      return error_reply(404, e.what());
    } catch (const std::exception& e) {
      return error_reply(500, e.what());
    }
  }

  std::unique_lock<std::mutex> lock_for(const std::string& id) {
    if (id.empty()) return {};
    std::lock_guard guard(locks_mutex_);
    auto& m = id_locks_[id];
    if (!m) m = std::make_unique<std::mutex>();
    return std::unique_lock(*m);
  }

  scenario::Baseline base_;
  scenario::ScenarioStore store_;
  ServiceOptions opt_;
  std::vector<BackgroundRow> background_;
  std::mutex locks_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> id_locks_;
  std::mutex cache_mutex_;
  std::map<std::string, nlohmann::json> explanations_;
};

inline void send(httplib::Response& res, const Reply& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

inline std::optional<std::string> query(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  return req.get_param_value(name);
}

/// Registers every route of the API on `server`.
inline void mount(httplib::Server& server, ApiService& svc) {
  server.Get("/health", [&](const httplib::Request&, httplib::Response& res) { send(res, svc.health()); });
  server.Get("/stations", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.stations(query(req, "month")));
  });
  server.Post("/scenarios", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.create_scenario(req.body));
  });
  server.Get(R"(/scenarios/([^/]+)/result)", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.scenario_result(req.matches[1]));
  });
  server.Get(R"(/stations/([^/]+)/attention)", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.attention(req.matches[1], query(req, "month")));
  });
  server.Get(R"(/stations/([^/]+)/attribution)", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.attribution(req.matches[1], query(req, "month")));
  });
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

}  // namespace tripgen::api
