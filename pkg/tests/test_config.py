"""Configuration schema tests: validation, defaults, settings plumbing."""

import json

import numpy as np
import pytest

from ngmix.config import RunConfig, config_from_dict, load_config
from ngmix.errors import ConfigError


def minimal(**overrides):
    doc = {
        "schema_version": 1,
        "model": {
            "fixed": ["1", "time"],
            "random": ["1"],
            "noise": {"family": "normal", "sigma": 0.5},
            "random_effects": {"family": "normal"},
        },
    }
    doc.update(overrides)
    return doc


class TestSchema:
    def test_minimal_document_parses(self):
        cfg = config_from_dict(minimal())
        assert cfg.fixed == ("1", "time")
        assert cfg.random == ("1",)
        np.testing.assert_array_equal(cfg.params0.beta, [0.0, 0.0])
        assert cfg.params0.sigma == 0.5
        np.testing.assert_array_equal(cfg.params0.Sigma, [[0.5]])
        assert cfg.params0.proc_spec is None
        assert cfg.seed == 0
        assert cfg.settings.sweeps == 5
        assert cfg.output is None

    @pytest.mark.parametrize("version", [None, 0, 2, "1"])
    def test_schema_version_enforced(self, version):
        doc = minimal()
        doc["schema_version"] = version
        with pytest.raises(ConfigError, match="schema_version"):
            config_from_dict(doc)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_dict(minimal(extra_section={}))
        doc = minimal()
        doc["model"]["families"] = {}
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_dict(doc)

    def test_model_section_required(self):
        with pytest.raises(ConfigError, match="model"):
            config_from_dict({"schema_version": 1})

    def test_fixed_terms_required(self):
        doc = minimal()
        doc["model"]["fixed"] = []
        with pytest.raises(ConfigError, match="fixed"):
            config_from_dict(doc)

    def test_duplicate_terms_rejected(self):
        doc = minimal()
        doc["model"]["fixed"] = ["1", "time", "time"]
        with pytest.raises(ConfigError, match="twice"):
            config_from_dict(doc)


class TestFamilies:
    @pytest.mark.parametrize("family", ["gal", "cauchy", "lognormal"])
    def test_noise_families_restricted(self, family):
        doc = minimal()
        doc["model"]["noise"] = {"family": family, "nu": 2.0}
        with pytest.raises(ConfigError, match="family"):
            config_from_dict(doc)

    @pytest.mark.parametrize("family", ["gal", "t", "cauchy"])
    def test_random_effect_families_restricted(self, family):
        doc = minimal()
        doc["model"]["random_effects"] = {"family": family, "nu": 2.0}
        with pytest.raises(ConfigError, match="family"):
            config_from_dict(doc)

    def test_process_t_rejected(self):
        doc = minimal()
        doc["model"]["process"] = {
            "family": "t", "nu": 3.0,
            "operator": {"kind": "exponential", "kappa": 1.0},
        }
        with pytest.raises(ConfigError, match="family"):
            config_from_dict(doc)

    def test_nu_required_for_mixtures(self):
        doc = minimal()
        doc["model"]["noise"] = {"family": "nig"}
        with pytest.raises(ConfigError, match="nu"):
            config_from_dict(doc)

    def test_nu_forbidden_for_normal(self):
        doc = minimal()
        doc["model"]["noise"] = {"family": "normal", "nu": 3.0}
        with pytest.raises(ConfigError, match="no nu"):
            config_from_dict(doc)

    def test_cauchy_process_accepted(self):
        doc = minimal()
        doc["model"]["process"] = {
            "family": "cauchy",
            "operator": {"kind": "exponential", "kappa": 2.0},
        }
        cfg = config_from_dict(doc)
        assert cfg.params0.proc_spec.family == "cauchy"
        assert cfg.params0.operator.kappa == 2.0


class TestModelAssembly:
    def test_beta_length_checked(self):
        doc = minimal()
        doc["model"]["beta"] = [0.1]
        with pytest.raises(ConfigError, match="beta"):
            config_from_dict(doc)

    def test_sigma_shape_checked(self):
        doc = minimal()
        doc["model"]["random"] = ["1", "time"]
        doc["model"]["random_effects"] = {"family": "normal",
                                          "Sigma": [[0.5]]}
        with pytest.raises(ConfigError, match="Sigma"):
            config_from_dict(doc)

    def test_random_terms_need_section(self):
        doc = minimal()
        del doc["model"]["random_effects"]
        with pytest.raises(ConfigError, match="random_effects"):
            config_from_dict(doc)

    def test_section_needs_random_terms(self):
        doc = minimal()
        doc["model"]["random"] = []
        with pytest.raises(ConfigError, match="random"):
            config_from_dict(doc)

    def test_no_random_effects_model(self):
        doc = minimal()
        doc["model"]["random"] = []
        del doc["model"]["random_effects"]
        cfg = config_from_dict(doc)
        assert cfg.params0.Sigma is None
        assert cfg.params0.q == 0

    def test_process_needs_operator(self):
        doc = minimal()
        doc["model"]["process"] = {"family": "nig", "nu": 1.0}
        with pytest.raises(ConfigError, match="operator"):
            config_from_dict(doc)

    def test_full_model_round(self):
        doc = minimal()
        doc["model"]["beta"] = [0.4, -0.1]
        doc["model"]["noise"] = {"family": "nig", "nu": 1.2, "sigma": 0.4,
                                 "scope": "per-subject"}
        doc["model"]["random_effects"] = {"family": "nig", "nu": 2.0,
                                          "mu": [0.3], "Sigma": [[0.7]]}
        doc["model"]["process"] = {"family": "gal", "nu": 1.6, "mu": -0.2,
                                   "operator": {"kind": "irw",
                                                "kappa": 1.0}}
        cfg = config_from_dict(doc)
        p = cfg.params0
        assert p.noise_scope == "per-subject"
        assert p.noise_spec.nu == 1.2
        np.testing.assert_array_equal(p.mu_u, [0.3])
        assert p.proc_spec.family == "gal"
        assert p.mu_w == -0.2
        assert p.operator.kind == "irw"

    def test_covariates_property(self):
        doc = minimal()
        doc["model"]["fixed"] = ["1", "time", "age", "sex"]
        doc["model"]["random"] = ["1", "age"]
        cfg = config_from_dict(doc)
        assert cfg.covariates == ("age", "sex")


class TestSettings:
    def test_estimator_and_gibbs_flow_through(self):
        doc = minimal(
            estimator={"iters": 800, "alpha0": 0.5, "strategy": "grouped",
                       "M": 10, "r": 2, "se_draws": 100},
            gibbs={"sweeps_per_step": 3},
            switch={"to_gaussian_above": 100.0, "to_cauchy_below": 0.01},
            seed=11,
        )
        cfg = config_from_dict(doc)
        s = cfg.settings
        assert s.iters == 800 and s.alpha0 == 0.5 and s.strategy == "grouped"
        assert s.M == 10 and s.r == 2 and s.se_draws == 100
        assert s.sweeps == 3 and s.seed == 11
        assert s.switch_rule.to_gaussian_above == 100.0
        assert s.switch_rule.to_cauchy_below == 0.01

    def test_bad_estimator_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            config_from_dict(minimal(estimator={"steps": 10}))

    def test_grid_nodes_must_increase(self):
        with pytest.raises(ConfigError, match="grid.nodes"):
            config_from_dict(minimal(grid={"nodes": [0.0, 1.0, 0.5]}))

    def test_grid_defaults(self):
        cfg = config_from_dict(minimal(grid={"max_nodes": 32, "pad": 0.1}))
        assert cfg.grid_nodes is None
        assert cfg.grid_max_nodes == 32
        assert cfg.grid_pad == 0.1

    def test_simulate_validation(self):
        with pytest.raises(ConfigError, match="schedule"):
            config_from_dict(minimal(simulate={"schedule": "weird"}))
        cfg = config_from_dict(minimal(simulate={"subjects": 7,
                                                 "obs_per_subject": 3,
                                                 "t_max": 2.0}))
        assert cfg.simulate.subjects == 7
        assert cfg.simulate.schedule == "regular"


class TestLoadConfig:
    def test_reads_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(minimal()), encoding="utf-8")
        cfg = load_config(path)
        assert isinstance(cfg, RunConfig)

    def test_invalid_json_names_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="broken.json"):
            load_config(path)
