#include <random>

#include <gtest/gtest.h>

#include "dosegp/model_store.hpp"
#include "fixture.hpp"

using namespace dosegp;

namespace {

std::vector<Eigen::VectorXd> probe_states(std::size_t q, int count) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd s(static_cast<Eigen::Index>(q));
    for (auto& v : s) v = u(rng);
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(ModelStore, RoundTripGivesIdenticalWhatIf) {
  const auto& p = fixture::small_pipeline();
  const auto bytes = store::serialize(p);
  const auto back = store::restore(bytes);
  EXPECT_EQ(store::serialize(back), bytes);
  EXPECT_EQ(store::digest_of(back), store::digest_of(p));
  const auto doses = p.config.dose_grid.values();
  int probe = 0;
  for (const auto& s : probe_states(p.scaling().variables.size(), 10)) {
    const double dose = doses[static_cast<std::size_t>(probe++ * 3) % doses.size()];
    const auto a = p.models.outcome(s, dose);
    const auto b = back.models.outcome(s, dose);
    for (std::size_t o = 0; o < kOutcomes; ++o) {
      EXPECT_EQ(a.outcomes[o].logit_mean, b.outcomes[o].logit_mean);
      EXPECT_EQ(a.outcomes[o].logit_variance, b.outcomes[o].logit_variance);
      EXPECT_EQ(a.outcomes[o].prob_mean, b.outcomes[o].prob_mean);
    }
    EXPECT_EQ(sample_reward(a, 100, 3).samples, sample_reward(b, 100, 3).samples);
  }
}

TEST(ModelStore, SerializationIsDeterministic) {
  const auto& p = fixture::small_pipeline();
  EXPECT_EQ(store::serialize(p), store::serialize(p));
  const auto again = train_pipeline(fixture::small_records(), fixture::small_config());
  EXPECT_EQ(store::serialize(again), store::serialize(p));
}

TEST(ModelStore, CorruptedByteRaisesDigestError) {
  auto bytes = store::serialize(fixture::small_pipeline());
  const auto pos = bytes.find("\"transition\"");
  ASSERT_NE(pos, std::string::npos);
  const auto digit = bytes.find_first_of("123456789", pos);
  ASSERT_NE(digit, std::string::npos);
  bytes[digit] = bytes[digit] == '9' ? '8' : static_cast<char>(bytes[digit] + 1);
  EXPECT_THROW(store::restore(bytes), DigestError);
}

TEST(ModelStore, FutureVersionRaisesVersionError) {
  auto doc = store::to_document(fixture::small_pipeline());
  doc["version"] = store::kFormatVersion + 1;
  try {
    store::restore(doc.dump());
    FAIL() << "expected VersionError";
  } catch (const VersionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(store::kFormatVersion + 1)), std::string::npos);
    EXPECT_NE(msg.find(std::to_string(store::kFormatVersion)), std::string::npos);
  }
}

TEST(ModelStore, TruncatedOrMalformedRaisesFormatError) {
  const auto bytes = store::serialize(fixture::small_pipeline());
  EXPECT_THROW(store::restore(bytes.substr(0, bytes.size() / 2)), FormatError);
  EXPECT_THROW(store::restore(""), FormatError);
  EXPECT_THROW(store::restore("[1, 2]"), FormatError);
  EXPECT_THROW(store::restore(R"({"version": "one"})"), FormatError);
  auto doc = store::to_document(fixture::small_pipeline());
  doc.erase("evaluation");
  doc["digest"] = store::sha256_hex([&] {
    auto d = doc;
    d.erase("digest");
    return d.dump();
  }());
  EXPECT_THROW(store::restore(doc.dump()), FormatError);
}

TEST(ModelStore, Sha256KnownVectors) {
  EXPECT_EQ(store::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(store::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
