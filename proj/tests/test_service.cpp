#include "dosegp/service.hpp"

#include <chrono>
#include <thread>

#include <gtest/gtest.h>

#include "fixture.hpp"

using namespace dosegp;
using dosegp::json;

namespace {

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    state_ = std::make_shared<service::State>();
    server_ = std::make_unique<httplib::Server>();
    service::install_routes(*server_, state_);
    port_ = server_->bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([] { server_->listen_after_bind(); });
    server_->wait_until_ready();
  }

  static void TearDownTestSuite() {
    server_->stop();
    thread_.join();
    server_.reset();
    state_.reset();
  }

  static httplib::Client client() {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(120, 0);
    return c;
  }

  static httplib::Result upload(const std::string& states, const std::string& outcomes) {
    httplib::MultipartFormDataItems items{{"states", states, "states.csv", "text/csv"},
                                          {"outcomes", outcomes, "outcomes.csv", "text/csv"}};
    return client().Post("/cohorts", items);
  }

  static std::string upload_fixture_cohort() {
    const auto& r = fixture::small_records();
    auto res = upload(format_states(r, VariableSchema::standard()), format_outcomes(r));
    EXPECT_EQ(res->status, 201);
    return json::parse(res->body)["cohort_id"].get<std::string>();
  }

  static json train_and_wait(const std::string& cohort_id, const RunConfig& config = fixture::small_config()) {
    json body{{"cohort_id", cohort_id}, {"config", to_json(config)}};
    auto res = client().Post("/models/train", body.dump(), "application/json");
    EXPECT_EQ(res->status, 202);
    const auto id = json::parse(res->body)["model_id"].get<std::string>();
    for (int i = 0; i < 1200; ++i) {
      auto s = client().Get("/models/" + id + "/status");
      auto j = json::parse(s->body);
      if (j["status"] == "done" || j["status"] == "failed") return j;
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    ADD_FAILURE() << "training did not finish";
    return json{};
  }

  // Trained once for the suite.
  static const json& trained() {
    static const json status = train_and_wait(upload_fixture_cohort());
    return status;
  }

  static std::string model_id() { return trained()["model_id"].get<std::string>(); }

  static json probe_state() {
    const auto& schema = VariableSchema::standard();
    const auto& s = fixture::small_records()[0].states[kStages - 1];
    json j = json::object();
    for (std::size_t k = 0; k < schema.size(); ++k) j[schema.names[k]] = s[static_cast<Eigen::Index>(k)];
    return j;
  }

  static inline std::shared_ptr<service::State> state_;
  static inline std::unique_ptr<httplib::Server> server_;
  static inline std::thread thread_;
  static inline int port_ = 0;
};

}  // namespace

TEST_F(ServiceTest, Health) {
  auto res = client().Get("/health");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto j = json::parse(res->body);
  EXPECT_EQ(j["status"], "ok");
  EXPECT_EQ(j["version"], service::kVersion);
}

TEST_F(ServiceTest, CohortUploadValidation) {
  std::vector<PatientRecord> two(fixture::small_records().begin(), fixture::small_records().begin() + 2);
  const auto states = format_states(two, VariableSchema::standard());
  const auto outcomes = format_outcomes(two);
  auto ok = upload(states, outcomes);
  EXPECT_EQ(ok->status, 201);
  EXPECT_EQ(json::parse(ok->body)["n"], 2);
  EXPECT_EQ(json::parse(ok->body)["validation"]["ok"], true);

  auto bad = upload(states, "patient_id,lc,rp2\nP001,2,0\nP002,0,1\n");
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body)["column"], "lc");

  auto dup = upload(states, outcomes + "P001,1,0\n");
  EXPECT_EQ(dup->status, 400);
  EXPECT_NE(json::parse(dup->body)["error"].get<std::string>().find("P001"), std::string::npos);

  auto missing = client().Post("/cohorts", httplib::MultipartFormDataItems{{"states", states, "s.csv", "text/csv"}});
  EXPECT_EQ(missing->status, 400);
}

TEST_F(ServiceTest, TrainUnknownCohortIs404) {
  auto res = client().Post("/models/train", json{{"cohort_id", "nope"}}.dump(), "application/json");
  EXPECT_EQ(res->status, 404);
  EXPECT_EQ(client().Get("/models/nope/status")->status, 404);
}

TEST_F(ServiceTest, TrainProducesMetricsAndStableDigest) {
  const auto& j = trained();
  ASSERT_EQ(j["status"], "done") << j.dump();
  EXPECT_EQ(j["metrics"]["cv_mse"].size(), 9u);
  EXPECT_TRUE(j["metrics"]["cross_entropy"].contains("lc"));
  EXPECT_EQ(j["digest"].get<std::string>().size(), 64u);
  const auto again = train_and_wait(upload_fixture_cohort());
  EXPECT_EQ(again["digest"], j["digest"]);
}

TEST_F(ServiceTest, WhatIf) {
  const auto path = "/models/" + model_id() + "/whatif";
  auto one = client().Post(path, json{{"state", probe_state()}, {"doses", {2.5}}}.dump(), "application/json");
  ASSERT_EQ(one->status, 200) << one->body;
  const auto j1 = json::parse(one->body);
  EXPECT_EQ(j1["prob_lc"].size(), 1u);
  EXPECT_EQ(j1["model_digest"], trained()["digest"]);
  const double lo = j1["prob_lc"][0]["lower"], mean = j1["prob_lc"][0]["mean"], hi = j1["prob_lc"][0]["upper"];
  EXPECT_LE(0.0, lo);
  EXPECT_LE(lo, mean);
  EXPECT_LE(mean, hi);
  EXPECT_LE(hi, 1.0);

  auto grid = client().Post(path, json{{"state", probe_state()}}.dump(), "application/json");
  ASSERT_EQ(grid->status, 200);
  EXPECT_EQ(json::parse(grid->body)["reward"].size(), 36u);
  auto repeat = client().Post(path, json{{"state", probe_state()}}.dump(), "application/json");
  EXPECT_EQ(repeat->body, grid->body);

  auto out = client().Post(path, json{{"state", probe_state()}, {"doses", {6.0}}}.dump(), "application/json");
  EXPECT_EQ(out->status, 422);
  auto unknown = probe_state();
  unknown["bogus"] = 1.0;
  EXPECT_EQ(client().Post(path, json{{"state", unknown}}.dump(), "application/json")->status, 422);
  EXPECT_EQ(client().Post("/models/nope/whatif", "{}", "application/json")->status, 404);
}

TEST_F(ServiceTest, Decide) {
  const auto path = "/models/" + model_id() + "/decide";
  const auto body = json{{"state", probe_state()}, {"physician_dose", 2.0}, {"seed", 5}}.dump();
  auto res = client().Post(path, body, "application/json");
  ASSERT_EQ(res->status, 200) << res->body;
  const auto j = json::parse(res->body);
  EXPECT_EQ(j["chosen"] == "AI", j["p_value"].get<double>() < 0.05);
  EXPECT_EQ(j["ai_reward"]["seed"], 5);
  EXPECT_EQ(j["sample_count"], 200);
  EXPECT_EQ(client().Post(path, body, "application/json")->body, res->body);
  auto out = client().Post(path, json{{"state", probe_state()}, {"physician_dose", 9.0}}.dump(), "application/json");
  EXPECT_EQ(out->status, 422);
}

TEST_F(ServiceTest, CompensationMap) {
  const auto path = "/models/" + model_id() + "/compensation-map";
  ASSERT_TRUE(trained()["compensation"].get<bool>());
  auto res = client().Get(path + "?resolution=2");
  ASSERT_EQ(res->status, 200) << res->body;
  const auto j = json::parse(res->body);
  EXPECT_EQ(j["cells"].size(), 4u);
  EXPECT_EQ(j["var1"], "tumor_geud");
  EXPECT_EQ(client().Get(path + "?resolution=2")->body, res->body);
  EXPECT_EQ(client().Get(path + "?resolution=1")->status, 400);
}

TEST_F(ServiceTest, CompensationMapWithoutSignificantCasesIs409) {
  auto config = fixture::small_config();
  config.alpha = 1e-12;
  config.mc_samples = 3;
  const auto j = train_and_wait(upload_fixture_cohort(), config);
  ASSERT_EQ(j["status"], "done") << j.dump();
  ASSERT_FALSE(j["compensation"].get<bool>());
  auto res = client().Get("/models/" + j["model_id"].get<std::string>() + "/compensation-map");
  EXPECT_EQ(res->status, 409);
  EXPECT_EQ(json::parse(res->body)["error"], "insufficient AI-superior cases");
}
