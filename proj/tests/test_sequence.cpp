#include <catch_amalgamated.hpp>

#include "sivsim/sequence.hpp"

using namespace sivsim;

TEST_CASE("fig1 protocol layout") {
  const auto seq = protocol_fig1(13.0, 300.0);
  CHECK(validate(seq).empty());
  CHECK(seq.period() == 45ms);
  REQUIRE(seq.segments.size() == 5);
  CHECK(seq.segments[1].tag == tags::kProbe);
  CHECK(seq.segments[1].channel(LaserColor::Resonant)->power_uw == 13.0);
  CHECK(seq.segments[1].channel(LaserColor::Green)->power_uw == 300.0);
  // Probe centred in the 5 ms green pulse.
  CHECK(seq.segment_start(1) == 2ms);
  CHECK(seq.segment_start(2) + seq.segments[2].duration == 5ms);
  CHECK(seq.segments[3].channels.empty());
  CHECK(seq.segments[4].duration == 38ms);
  CHECK(seq.segments[4].channel(LaserColor::Green) == nullptr);
}

TEST_CASE("fig1 with zero powers is still valid") {
  CHECK(validate(protocol_fig1(0.0, 300.0)).empty());
  CHECK(validate(protocol_fig1(13.0, 0.0)).empty());
  CHECK(protocol_fig1(0.0, 300.0).segments[1].channel(LaserColor::Resonant) != nullptr);
  CHECK_THROWS(protocol_fig1(-1.0, 300.0));
}

TEST_CASE("fig3 protocol layout") {
  const auto on = protocol_fig3(10ms, true, 50.0);
  CHECK(validate(on).empty());
  CHECK(on.segments.size() == 5);
  CHECK(on.period() == 37ms);
  for (const auto& s : on.segments) {
    REQUIRE(s.channel(LaserColor::NearResonant) != nullptr);
    CHECK(s.channel(LaserColor::NearResonant)->power_uw == 13.0);
    CHECK(s.voltage_v == 50.0);
  }
  const auto off = protocol_fig3(10ms, false, 50.0);
  REQUIRE(off.segments.size() == on.segments.size());
  for (std::size_t i = 0; i < on.segments.size(); ++i) {
    CHECK(off.segments[i].channel(LaserColor::NearResonant)->power_uw == 0.0);
    CHECK(off.segments[i].duration == on.segments[i].duration);
    const bool off_res = off.segments[i].channel(LaserColor::Resonant) != nullptr;
    const bool on_res = on.segments[i].channel(LaserColor::Resonant) != nullptr;
    CHECK(off_res == on_res);
  }
  const auto abut = protocol_fig3(0ms, false, 0.0);
  CHECK(abut.segments.size() == 4);
  CHECK(abut.segments[2].tag == tags::kPulse1);
  CHECK(abut.segments[3].tag == tags::kPulse2);
  CHECK_THROWS_AS(protocol_fig3(-1ms, true, 0.0), std::invalid_argument);
}

TEST_CASE("validate reports every violation") {
  PulseSequence seq;
  CHECK(validate(seq).size() == 1);
  seq.segments = {{0ms, {}, 0.0, "a"},
                  {1ms, {LaserChannel::resonant(1.0), LaserChannel::resonant(2.0)}, 0.0, "b"},
                  {1ms, {}, 5.0, "c"}};
  const auto errs = validate(seq);
  REQUIRE(errs.size() == 3);
  CHECK(errs[0].find("non-positive duration") != std::string::npos);
  CHECK(errs[1].find("duplicate color") != std::string::npos);
  CHECK(errs[2].find("voltage step") != std::string::npos);
  seq.voltage_stepped = true;
  CHECK(validate(seq).size() == 2);
  CHECK_THROWS_AS(require_valid(seq), InvalidSequence);
}

TEST_CASE("period is exact over many repetitions in integer ns") {
  PulseSequence seq;
  for (int i = 0; i < 1000; ++i) seq.segments.push_back({Duration{333'333}, {}, 0.0, ""});
  CHECK(seq.period().count() == 333'333'000);
  append_repetition_gap(seq, 2ms);
  CHECK(seq.period().count() == 335'333'000);
  CHECK(seq.segments.back().tag == tags::kRepetitionGap);
}
