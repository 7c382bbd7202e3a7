"""Dataset parsing, LOCF imputation, splitting and model files."""

import json

import numpy as np
import pytest

from tacropk import pk
from tacropk.dataio import (Cohort, DataWarning, Provenance,
                            canonical_json, load_model_def, locf_fill,
                            model_def_from_dict, model_def_to_dict,
                            parse_dataset, save_model_def, split,
                            summarize_cohort, write_dataset_csv)
from tacropk.errors import ConfigurationError, DataError
from tacropk.pk import Dose, EventTimeline

from support import small_model

HEADER = "ID,TIME,AMT,DV,MDV,POD,ALB,ASAT,WT,TXDATE\n"

GOOD_CSV = HEADER + """\
P01,7.25,4,,1,1,35,40,70,2019-01-05
P01,18.5,4,,1,1,,,,2019-01-05
P01,30,,9.5,0,2,34,38,70,2019-01-05
P01,31.25,4,,1,2,,,,2019-01-05
P02,7.25,3,,1,1,30,55,82,2019-01-02
P02,54,,7.1,0,3,31,50,81,2019-01-02
"""


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def make_cohort(patients):
    return Cohort(patients=tuple(patients),
                  provenance=Provenance(source="<test>", digest="0",
                                        n_rows=len(patients)))


def trivial_patient(pid, txdate=None):
    events = pk.make_events([Dose(7.25, 4.0)])
    return EventTimeline(patient_id=pid, events=events,
                         covariates=pk.constant_covariates(events),
                         transplant_date=txdate)


class TestParseDataset:
    def test_good_file(self, tmp_path):
        cohort = parse_dataset(write(tmp_path, GOOD_CSV))
        assert len(cohort) == 2
        assert [p.patient_id for p in cohort.patients] == ["P01", "P02"]
        p1 = cohort.patient("P01")
        assert len(p1.doses) == 3
        assert len(p1.usable_observations) == 1
        assert p1.usable_observations[0].concentration == 9.5
        assert p1.transplant_date == "2019-01-05"
        assert cohort.provenance.exclusions == ()
        assert cohort.provenance.n_rows == 6
        assert len(cohort.provenance.digest) == 64

    def test_sparse_covariates_kept_per_field(self, tmp_path):
        text = HEADER + (
            "P01,7.25,4,,1,1,35,,70,\n"
            "P01,30,,9.5,0,2,,40,,\n")
        cohort = parse_dataset(write(tmp_path, text))
        raw = cohort.patient("P01").raw_covariates
        assert raw["alb"] == {1: 35.0}
        assert raw["asat"] == {2: 40.0}
        assert raw["weight"] == {1: 70.0}
        # no POD has all three fields, so no complete state yet
        assert cohort.patient("P01").covariates == {}

    def test_covariate_only_row(self, tmp_path):
        text = HEADER + (
            "P01,7.25,4,,1,1,35,40,70,\n"
            "P01,24,,,1,2,33,39,71,\n")
        cohort = parse_dataset(write(tmp_path, text))
        assert cohort.patient("P01").raw_covariates["alb"] == \
            {1: 35.0, 2: 33.0}
        assert cohort.provenance.exclusions == ()

    def test_exclusion_rows(self, tmp_path):
        text = HEADER + (
            "P01,7.25,4,,1,1,35,40,70,\n"
            "P01,8,4,9.5,0,1,,,,\n"       # both AMT and DV
            "P01,9,,,0,1,,,,\n"           # empty and MDV=0
            "P01,10,,x,0,1,,,,\n"         # unparseable DV
            "P01,11,,5.0,2,1,,,,\n"       # MDV out of range
            "P01,12,,5.0,0,0,,,,\n"       # POD < 1
            ",13,,5.0,0,1,,,,\n"          # empty ID
            "P01,14,,5.0,0,1,-3,,,\n"     # negative covariate (row kept)
            "P01,15,,0,0,1,,,,\n")        # non-positive DV
        cohort = parse_dataset(write(tmp_path, text))
        exclusions = cohort.provenance.exclusions
        assert len(exclusions) == 8
        assert any("both AMT and DV" in e for e in exclusions)
        assert any("MDV" in e for e in exclusions)
        assert any("POD" in e for e in exclusions)
        assert any("empty ID" in e for e in exclusions)
        assert any("ALB" in e for e in exclusions)
        p1 = cohort.patient("P01")
        # the negative-ALB row is itself a valid observation row; the
        # DV=0 row is excluded wholesale
        assert len(p1.usable_observations) == 1
        assert p1.usable_observations[0].time == 14.0

    def test_non_monotone_time_names_patient(self, tmp_path):
        text = HEADER + (
            "P01,30,,9.5,0,2,35,40,70,\n"
            "P01,7.25,4,,1,1,,,,\n")
        with pytest.raises(DataError, match="P01"):
            parse_dataset(write(tmp_path, text))

    def test_missing_column(self, tmp_path):
        text = "ID,TIME,AMT,DV,MDV,POD,ALB,ASAT\nP01,1,1,,1,1,35,40\n"
        with pytest.raises(DataError, match="WT"):
            parse_dataset(write(tmp_path, text))

    def test_conflicting_txdate_excluded(self, tmp_path):
        text = HEADER + (
            "P01,7.25,4,,1,1,35,40,70,2019-01-05\n"
            "P01,30,,9.5,0,2,,,,2019-02-01\n")
        cohort = parse_dataset(write(tmp_path, text))
        assert any("TXDATE" in e for e in cohort.provenance.exclusions)
        assert len(cohort.patient("P01").usable_observations) == 0

    def test_fuzz_never_crashes(self, tmp_path):
        rng = np.random.default_rng(41)
        fields = ["", "1", "-1", "0", "3.5", "x", "1e3", " ", "nan"]
        for trial in range(40):
            n = int(rng.integers(1, 12))
            lines = [HEADER.strip()]
            t = 0.0
            for _ in range(n):
                t += float(rng.uniform(0, 24))
                row = [str(rng.choice(["P1", "P2", ""])), f"{t:g}"]
                row += [str(rng.choice(fields)) for _ in range(7)]
                row.append("")
                lines.append(",".join(row))
            path = write(tmp_path, "\n".join(lines) + "\n",
                         name=f"fuzz{trial}.csv")
            try:
                cohort = parse_dataset(path)
            except DataError:
                continue
            assert cohort.provenance.n_rows == n


class TestLocfFill:
    def _cohort(self, tmp_path, text):
        return parse_dataset(write(tmp_path, text))

    def test_carry_forward(self, tmp_path):
        text = HEADER + (
            "P01,7.25,4,,1,1,35,40,70,\n"
            "P01,31.25,4,,1,2,,,,\n"
            "P01,55.25,4,,1,3,30,,72,\n"
            "P01,78,,8.0,0,4,,,,\n")
        filled = locf_fill(self._cohort(tmp_path, text))
        cov = filled.patient("P01").covariates
        assert sorted(cov) == [1, 2, 3, 4]
        assert cov[2].alb == 35.0 and cov[2].asat == 40.0
        assert cov[3].alb == 30.0 and cov[3].asat == 40.0
        assert cov[4].weight == 72.0

    def test_leading_backfill_warns(self, tmp_path):
        text = HEADER + (
            "P01,7.25,4,,1,1,,40,70,\n"
            "P01,30,,8.0,0,2,35,,,\n")
        with pytest.warns(DataWarning, match="alb"):
            filled = locf_fill(self._cohort(tmp_path, text))
        cov = filled.patient("P01").covariates
        assert cov[1].alb == 35.0  # back-filled from POD 2
        assert cov[2].asat == 40.0

    def test_never_observed_covariate(self, tmp_path):
        text = HEADER + (
            "P01,7.25,4,,1,1,35,,70,\n"
            "P01,30,,8.0,0,2,,,,\n")
        with pytest.raises(ConfigurationError, match="asat"):
            locf_fill(self._cohort(tmp_path, text))

    def test_idempotent(self, tmp_path):
        text = HEADER + (
            "P01,7.25,4,,1,1,35,40,70,\n"
            "P01,31.25,4,,1,2,,,,\n"
            "P01,54,,8.0,0,3,33,42,71,\n")
        once = locf_fill(self._cohort(tmp_path, text))
        twice = locf_fill(once)
        assert once.patient("P01").covariates == \
            twice.patient("P01").covariates

    def test_coverage_satisfied_after_fill(self, tmp_path):
        filled = locf_fill(self._cohort(tmp_path, GOOD_CSV))
        for p in filled.patients:
            p.check_covariate_coverage()  # must not raise


class TestSplit:
    def test_seven_three(self):
        cohort = make_cohort([
            trivial_patient(f"P{i:02d}", f"2019-01-{i + 1:02d}")
            for i in range(10)])
        est, pred = split(cohort, 0.70)
        assert len(est) == 7 and len(pred) == 3
        assert [p.patient_id for p in est.patients] == \
            [f"P{i:02d}" for i in range(7)]

    def test_date_order_with_id_fallback(self):
        cohort = make_cohort([
            trivial_patient("B", "2019-03-01"),
            trivial_patient("A", None),
            trivial_patient("C", "2019-01-01"),
            trivial_patient("D", "2019-03-01")])
        est, pred = split(cohort, 0.5)
        assert [p.patient_id for p in est.patients] == ["C", "B"]
        assert [p.patient_id for p in pred.patients] == ["D", "A"]

    def test_override_count(self):
        cohort = make_cohort([
            trivial_patient(f"P{i:02d}", f"2019-01-01") for i in range(79)])
        est, pred = split(cohort, 0.70)
        assert len(est) == 56 and len(pred) == 23
        est, pred = split(cohort, 0.70, n_estimation=55)
        assert len(est) == 55 and len(pred) == 24

    def test_union_disjoint_deterministic(self):
        cohort = make_cohort([
            trivial_patient(f"P{i}", f"2019-0{1 + i % 9}-15")
            for i in range(11)])
        est1, pred1 = split(cohort, 0.6)
        est2, pred2 = split(cohort, 0.6)
        ids_e = {p.patient_id for p in est1.patients}
        ids_p = {p.patient_id for p in pred1.patients}
        assert ids_e | ids_p == {p.patient_id for p in cohort.patients}
        assert ids_e & ids_p == set()
        assert [p.patient_id for p in est1.patients] == \
            [p.patient_id for p in est2.patients]
        assert est1.provenance.parent_digest == cohort.provenance.digest

    def test_full_fraction_warns(self):
        cohort = make_cohort([trivial_patient("A"), trivial_patient("B")])
        with pytest.warns(DataWarning):
            est, pred = split(cohort, 1.0)
        assert len(est) == 2 and len(pred) == 0

    def test_bad_inputs(self):
        cohort = make_cohort([trivial_patient("A"), trivial_patient("B")])
        with pytest.raises(DataError):
            split(make_cohort([trivial_patient("A")]), 0.5)
        with pytest.raises(DataError):
            split(cohort, 0.0)
        with pytest.raises(DataError):
            split(cohort, 1.5)


def demo_doc():
    model = small_model(estimable=("cl_max", "v_f"))
    return model_def_to_dict("demo", model)


class TestModelDefinition:
    def test_round_trip_byte_identical(self, tmp_path):
        doc = demo_doc()
        path = tmp_path / "model.json"
        definition = model_def_from_dict(doc)
        save_model_def(definition, path)
        first = path.read_bytes()
        reloaded = load_model_def(path)
        save_model_def(reloaded, path)
        assert path.read_bytes() == first
        assert first.endswith(b"\n")
        assert json.loads(first) == doc

    def test_loaded_model_matches(self, tmp_path):
        path = tmp_path / "model.json"
        save_model_def(model_def_from_dict(demo_doc()), path)
        definition = load_model_def(path)
        assert definition.name == "demo"
        assert definition.model.theta.cl_max == 26.5
        assert definition.model.estimable == ("cl_max", "v_f")
        assert definition.model.eta_names == ("cl", "v")

    def test_dotted_path_error(self):
        doc = demo_doc()
        doc["structural"]["cl_max"]["value"] = -1.0
        with pytest.raises(ConfigurationError,
                           match=r"\.structural\.cl_max"):
            model_def_from_dict(doc)

    def test_missing_required_block(self):
        with pytest.raises(ConfigurationError, match="structural"):
            model_def_from_dict({"name": "x"})

    def test_ka_never_estimable(self):
        doc = demo_doc()
        doc["structural"]["ka"]["estimable"] = True
        with pytest.raises(ConfigurationError, match="ka"):
            model_def_from_dict(doc)

    def test_missing_prior_block_is_uninformative(self):
        definition = model_def_from_dict(demo_doc())
        assert definition.prior is not None
        assert definition.prior.weight("omega") == 0.0
        assert definition.prior.theta_mean == {}

    def test_prior_block_round_trip(self):
        model = small_model(estimable=("cl_max",))
        from tacropk.estimation import PriorSpec
        prior = PriorSpec(theta_mean={"cl_max": 26.5},
                          theta_se={"cl_max": 2.0},
                          omega_prior=np.diag([0.09, 0.09]), nu=4.0,
                          weights={"cl_max": 0.5})
        doc = model_def_to_dict("prior-demo", model, prior)
        definition = model_def_from_dict(doc)
        assert definition.prior.theta_mean == {"cl_max": 26.5}
        assert definition.prior.weight("cl_max") == 0.5
        assert definition.prior.nu == 4.0
        np.testing.assert_allclose(definition.prior.omega_prior,
                                   np.diag([0.09, 0.09]))

    def test_unknown_key_strict_vs_lenient(self):
        doc = demo_doc()
        doc["comments"] = "hello"
        with pytest.raises(ConfigurationError):
            model_def_from_dict(doc, strict=True)
        with pytest.warns(DataWarning, match="comments"):
            definition = model_def_from_dict(doc, strict=False)
        assert definition.name == "demo"

    def test_invalid_json_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError, match="invalid JSON"):
            load_model_def(path)

    def test_canonical_json_sorted(self):
        text = canonical_json({"b": 1, "a": {"d": 2, "c": 3}})
        assert text.index('"a"') < text.index('"b"')
        assert text.endswith("\n")


class TestCohortSummary:
    def test_summary_rows(self, tmp_path):
        cohort = locf_fill(parse_dataset(write(tmp_path, GOOD_CSV)))
        rows = dict((r[0], r[1]) for r in summarize_cohort(cohort))
        assert rows["n_patients"] == 2
        assert rows["n_observations"] == 2
        assert rows["obs_per_patient_mean"] == 1.0
        assert rows["pod_min"] == 2
        assert rows["pod_max"] == 3
        assert "alb_mean" in rows and "weight_sd" in rows


class TestDatasetRoundTrip:
    def test_write_then_parse(self, tmp_path):
        cohort = locf_fill(parse_dataset(write(tmp_path, GOOD_CSV)))
        out = tmp_path / "out.csv"
        write_dataset_csv(cohort, out)
        back = parse_dataset(out)
        for p, q in zip(cohort.patients, back.patients):
            assert p.patient_id == q.patient_id
            assert len(p.doses) == len(q.doses)
            assert [o.time for o in p.usable_observations] == \
                [o.time for o in q.usable_observations]
            for a, b in zip(p.usable_observations,
                            q.usable_observations):
                assert b.concentration == pytest.approx(a.concentration,
                                                        rel=1e-5)
            assert p.transplant_date == q.transplant_date
