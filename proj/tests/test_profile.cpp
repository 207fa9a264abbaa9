#include "doctest.h"

#include <string>

#include "confopt/profile.hpp"

using namespace confopt;

TEST_CASE("method presets carry the published recipes") {
  CHECK(method_names().size() == 7);

  Profile darts = make_preset("darts");
  CHECK(darts.sampler.kind == SamplerKind::kDarts);
  CHECK(darts.epochs == 100);
  CHECK(darts.warm_epochs == 0);
  CHECK(darts.arch_opt.lr == doctest::Approx(3e-3));
  CHECK(darts.weight_opt.lr == doctest::Approx(0.025));
  CHECK(darts.weight_opt.momentum == doctest::Approx(0.9));
  CHECK(darts.weight_opt.weight_decay == doctest::Approx(3e-4));
  CHECK(darts.arch_opt.beta1 == doctest::Approx(0.5));
  CHECK(darts.arch_opt.beta2 == doctest::Approx(0.999));
  CHECK(darts.arch_opt.weight_decay == doctest::Approx(1e-3));
  CHECK(!darts.mutation.partial_connection);
  CHECK(!darts.oles_enabled);
  CHECK(darts.seeds == std::vector<int>{0, 1, 2});

  Profile pc = make_preset("pcdarts");
  CHECK(pc.sampler.kind == SamplerKind::kDarts);
  CHECK(pc.mutation.partial_connection);
  CHECK(pc.mutation.K == 4);
  CHECK(pc.edge_normalization);
  CHECK(pc.warm_epochs == 15);

  Profile fair = make_preset("fairdarts");
  CHECK(fair.sampler.kind == SamplerKind::kFairdarts);
  CHECK(fair.penalty.fairdarts_lambda == doctest::Approx(10.0));

  Profile smooth = make_preset("smoothdarts");
  CHECK(smooth.mutation.perturbation == PerturbMode::kRandom);
  CHECK(smooth.mutation.epsilon == doctest::Approx(0.1));

  Profile oles = make_preset("oles");
  CHECK(oles.oles_enabled);
  CHECK(oles.oles_window == 20);
  CHECK(oles.oles_threshold == doctest::Approx(0.4));

  Profile dr = make_preset("drnas");
  CHECK(dr.sampler.kind == SamplerKind::kDrnas);
  CHECK(dr.arch_opt.lr == doctest::Approx(6e-3));
  CHECK(dr.mutation.partial_connection);
  CHECK(dr.mutation.K == 4);
  CHECK(dr.warm_epochs == 15);
  CHECK(dr.penalty.drnas_lambda == doctest::Approx(1.0));
  CHECK(dr.mutation.prune_epochs.empty());

  Profile gdas = make_preset("gdas");
  CHECK(gdas.sampler.kind == SamplerKind::kGdas);
  CHECK(gdas.epochs == 300);
  CHECK(gdas.sampler.tau_start == doctest::Approx(10.0));
  CHECK(gdas.sampler.tau_end == doctest::Approx(0.1));

  CHECK_THROWS_AS(make_preset("nasnet"), std::invalid_argument);
}

TEST_CASE("batch sizes follow the per-variant table") {
  for (const std::string& m : {"darts", "pcdarts", "fairdarts", "smoothdarts", "oles", "drnas"}) {
    Profile p = make_preset(m);
    CHECK(preset_batch_size(p, VariantKind::kDeep) == 64);
    CHECK(preset_batch_size(p, VariantKind::kWide) == 96);
    CHECK(preset_batch_size(p, VariantKind::kSingleCell) == 96);
  }
  Profile g = make_preset("gdas");
  CHECK(preset_batch_size(g, VariantKind::kDeep) == 320);
  CHECK(preset_batch_size(g, VariantKind::kWide) == 480);
  CHECK(preset_batch_size(g, VariantKind::kSingleCell) == 480);

  Profile p = make_preset("darts");
  p.batch_size = 17;
  CHECK(preset_batch_size(p, VariantKind::kWide) == 17);
}

TEST_CASE("serialize-parse round trips are idempotent for every preset") {
  for (const auto& m : method_names()) {
    Profile p = make_preset(m);
    std::string s1 = p.serialize();
    Profile q = Profile::parse(s1);
    std::string s2 = q.serialize();
    CHECK(s1 == s2);
    CHECK(Profile::parse(s2).serialize() == s2);
  }
}

TEST_CASE("file values overlay the preset") {
  Profile p = Profile::parse("[method]\nname=gdas\n[trainer]\nepochs=50\n");
  CHECK(p.method == "gdas");
  CHECK(p.sampler.kind == SamplerKind::kGdas);
  CHECK(p.epochs == 50);
  // everything else stays at the preset
  CHECK(preset_batch_size(p, VariantKind::kDeep) == 320);

  Profile q = Profile::parse(
      "[method]\nname=smoothdarts\n"
      "[mutation]\nperturbation=adversarial\nepsilon=0.05\n"
      "[trainer]\nseeds=4,5\nbatch_size=32\n"
      "[extra]\nchannel_override=8\n");
  CHECK(q.mutation.perturbation == PerturbMode::kAdversarial);
  CHECK(q.mutation.epsilon == doctest::Approx(0.05));
  CHECK(q.seeds == std::vector<int>{4, 5});
  CHECK(q.batch_size == 32);
  CHECK(q.channel_override == 8);

  Profile r = Profile::parse(
      "[method]\nname=drnas\n"
      "[mutation]\nprune_epochs=10,20\nprune_fractions=0.3,0.5\n");
  CHECK(r.mutation.prune_epochs == std::vector<int>{10, 20});
  CHECK(r.mutation.prune_fractions.size() == 2);
  CHECK(r.serialize() == Profile::parse(r.serialize()).serialize());
}

TEST_CASE("parse rejections name the offending line") {
  auto message = [](const std::string& text) {
    try {
      Profile::parse(text);
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };

  // unknown key on line 4
  std::string m1 = message("[method]\nname=darts\n[trainer]\nlearning_rate=0.1\n");
  CHECK(m1.find("line 4") != std::string::npos);
  CHECK(m1.find("learning_rate") != std::string::npos);

  // type mismatch on line 3
  std::string m2 = message("[method]\nname=darts\n[trainer]\nepochs=ten\n");
  CHECK(m2.find("line 4") != std::string::npos);

  CHECK(message("[method]\nname=darts\n[optimizer]\nlr=1\n").find("line 3") != std::string::npos);
  CHECK(message("[trainer]\nepochs=5\n").find("method") != std::string::npos);
  CHECK(message("[method]\nname=darts\n[trainer]\nepochs\n").find("line 4") != std::string::npos);
  CHECK(message("epochs=5\n").find("line 1") != std::string::npos);
  CHECK(message("[method]\nname=foo\n") != "no error");
}

TEST_CASE("comments and blank lines are ignored") {
  Profile p = Profile::parse("# a comment\n\n[method]\nname=oles\n\n# another\n");
  CHECK(p.method == "oles");
  CHECK(p.oles_enabled);
}

TEST_CASE("validate rejects inconsistent settings") {
  Profile p = make_preset("darts");
  p.warm_epochs = 100;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);

  Profile q = make_preset("darts");
  q.seeds.clear();
  CHECK_THROWS_AS(q.validate(), std::invalid_argument);

  Profile r = make_preset("gdas");
  r.sampler.tau_start = 0.0;
  CHECK_THROWS_AS(r.validate(), std::invalid_argument);

  Profile s = make_preset("darts");
  s.early_stop = "patience";
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  CHECK_THROWS_AS(Profile::parse("[method]\nname=darts\n[trainer]\nepochs=0\n"),
                  std::invalid_argument);
}
