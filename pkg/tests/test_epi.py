import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavesim.epi import (DATA_DIR, LEGAL_TRANSITIONS, AgentEpiState, DiseaseParams, DiseaseState, EpiArrays,
                         ImmunityRecord, MaskParams, NaturalWaning, VaccineWaningTable, advance_disease_state,
                         advance_states, apply_vaccine_waning, draw_infectivity, infection_probability,
                         resolve_immune_escape, resolve_immune_escape_arrays)
from wavesim.errors import ConfigurationError, ContractViolation

NEUTRAL = DiseaseParams(base_transmission_rate=0.2, superspreader_shape=None,
                        asymptomatic_infectivity_multiplier=1.0, presymptomatic_infectivity_multiplier=1.0)
SYMPTOMATIC = AgentEpiState(DiseaseState.SYMPTOMATIC)
SUSCEPTIBLE = AgentEpiState()


def test_neutral_probability_is_beta():
    assert infection_probability(SYMPTOMATIC, SUSCEPTIBLE, NEUTRAL) == pytest.approx(0.2)


def test_full_protection_blocks_infection():
    protected = AgentEpiState(immunity=ImmunityRecord(vaccinated=True, doses=2,
                                                      infection_protection_multiplier=1.0))
    assert infection_probability(SYMPTOMATIC, protected, NEUTRAL) == 0.0


def test_both_masked_multiplies_efficacies():
    p = infection_probability(SYMPTOMATIC, SUSCEPTIBLE, NEUTRAL, MaskParams(0.40, 0.60),
                              infector_masked=True, susceptible_masked=True)
    assert p == pytest.approx(0.2 * 0.4 * 0.6)
    assert p == pytest.approx(0.048)


def test_stage_multipliers_apply():
    params = DiseaseParams(base_transmission_rate=0.2, superspreader_shape=None,
                           asymptomatic_infectivity_multiplier=0.5, presymptomatic_infectivity_multiplier=0.25)
    asym = AgentEpiState(DiseaseState.ASYMPTOMATIC)
    pre = AgentEpiState(DiseaseState.PRESYMPTOMATIC, infectivity_multiplier=2.0)
    assert infection_probability(asym, SUSCEPTIBLE, params) == pytest.approx(0.1)
    assert infection_probability(pre, SUSCEPTIBLE, params) == pytest.approx(0.1)


def test_superspreader_multiplier_is_clamped():
    hot = AgentEpiState(DiseaseState.SYMPTOMATIC, infectivity_multiplier=40.0)
    assert infection_probability(hot, SUSCEPTIBLE, NEUTRAL) == 1.0


@pytest.mark.parametrize("state", [DiseaseState.SUSCEPTIBLE, DiseaseState.EXPOSED, DiseaseState.RECOVERED])
def test_non_infectious_infector_is_a_contract_violation(state):
    with pytest.raises(ContractViolation):
        infection_probability(AgentEpiState(state), SUSCEPTIBLE, NEUTRAL)


def test_non_susceptible_target_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        infection_probability(SYMPTOMATIC, AgentEpiState(DiseaseState.RECOVERED), NEUTRAL)


unit = st.floats(0.0, 1.0)
inf_state = st.sampled_from([DiseaseState.PRESYMPTOMATIC, DiseaseState.SYMPTOMATIC, DiseaseState.ASYMPTOMATIC])


@st.composite
def pair_inputs(draw):
    params = DiseaseParams(
        base_transmission_rate=draw(unit),
        asymptomatic_infectivity_multiplier=draw(st.floats(1e-6, 1.0)),
        presymptomatic_infectivity_multiplier=draw(st.floats(1e-6, 1.0)),
    )
    infector = AgentEpiState(draw(inf_state), infectivity_multiplier=draw(st.floats(1e-6, 50.0)),
                             immunity=ImmunityRecord(transmission_reduction_multiplier=draw(unit)))
    target = AgentEpiState(immunity=ImmunityRecord(infection_protection_multiplier=draw(unit)))
    masks = MaskParams(draw(unit), draw(unit))
    return infector, target, params, masks, draw(st.booleans()), draw(st.booleans())


@settings(max_examples=10_000, deadline=None)
@given(pair_inputs())
def test_probability_in_unit_interval(args):
    p = infection_probability(*args)
    assert 0.0 <= p <= 1.0


@settings(max_examples=10_000, deadline=None)
@given(pair_inputs(), unit, st.sampled_from(["mask_in", "mask_out", "protection", "reduction"]))
def test_probability_non_increasing_in_each_modifier(args, bump, which):
    infector, target, params, masks, out_masked, in_masked = args
    base = infection_probability(infector, target, params, masks, True, True)
    if which == "mask_in":
        masks2 = MaskParams(max(masks.infection_efficacy, bump), masks.transmission_efficacy)
        higher = infection_probability(infector, target, params, masks2, True, True)
    elif which == "mask_out":
        masks2 = MaskParams(masks.infection_efficacy, max(masks.transmission_efficacy, bump))
        higher = infection_probability(infector, target, params, masks2, True, True)
    elif which == "protection":
        im = target.immunity
        t2 = AgentEpiState(immunity=ImmunityRecord(
            infection_protection_multiplier=max(im.infection_protection_multiplier, bump)))
        higher = infection_probability(infector, t2, params, masks, True, True)
    else:
        im = infector.immunity
        i2 = AgentEpiState(infector.state, infectivity_multiplier=infector.infectivity_multiplier,
                           immunity=ImmunityRecord(
                               transmission_reduction_multiplier=max(im.transmission_reduction_multiplier, bump)))
        higher = infection_probability(i2, target, params, masks, True, True)
    assert higher <= base + 1e-15


def test_mean_infectivity_is_one():
    draws = draw_infectivity(100_000, DiseaseParams(), np.random.default_rng(1))
    assert abs(draws.mean() - 1.0) <= 0.02
    assert np.all(draws > 0)


def test_superspreading_disabled_gives_ones():
    assert np.all(draw_infectivity(10, DiseaseParams(superspreader_shape=None), np.random.default_rng(0)) == 1)


# --- state machine -------------------------------------------------------------------

def test_exposed_becomes_presymptomatic_at_latent_end():
    params = DiseaseParams(latent_duration=4)
    agent = AgentEpiState(DiseaseState.EXPOSED, days_in_state=3, symptomatic_destiny=True)
    nxt = advance_disease_state(agent, params, np.random.default_rng(0))
    assert nxt.state == DiseaseState.PRESYMPTOMATIC
    assert nxt.days_in_state == 0


def test_exposed_asymptomatic_branch():
    params = DiseaseParams(latent_duration=4)
    agent = AgentEpiState(DiseaseState.EXPOSED, days_in_state=3, symptomatic_destiny=False)
    assert advance_disease_state(agent, params, np.random.default_rng(0)).state == DiseaseState.ASYMPTOMATIC


def test_symptomatic_recovers_at_infectious_end():
    params = DiseaseParams(infectious_duration=5)
    agent = AgentEpiState(DiseaseState.SYMPTOMATIC, days_in_state=4)
    nxt = advance_disease_state(agent, params, np.random.default_rng(0))
    assert nxt.state == DiseaseState.RECOVERED and nxt.days_in_state == 0


def test_days_in_state_increments_before_end():
    agent = AgentEpiState(DiseaseState.EXPOSED, days_in_state=1)
    nxt = advance_disease_state(agent, DiseaseParams(latent_duration=4), np.random.default_rng(0))
    assert nxt.state == DiseaseState.EXPOSED and nxt.days_in_state == 2


def test_advance_on_susceptible_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        advance_disease_state(SUSCEPTIBLE, DiseaseParams(), np.random.default_rng(0))


def test_full_course_visits_only_legal_transitions():
    params = DiseaseParams(natural_immunity_waning=NaturalWaning(np.array([0.0, 0.0, 0.5])))
    rng = np.random.default_rng(4)
    epi = EpiArrays.susceptible(2000)
    epi.state[:] = DiseaseState.EXPOSED
    epi.symptomatic = rng.random(2000) < 0.6
    seen = set()
    for _ in range(40):
        _, frm, to = advance_states(epi, params, rng)
        seen.update(zip(frm.tolist(), to.tolist()))
    assert seen <= LEGAL_TRANSITIONS
    assert (int(DiseaseState.RECOVERED), int(DiseaseState.SUSCEPTIBLE)) in seen


def test_recovered_cohort_matches_product_oracle():
    waning = NaturalWaning.delayed_constant(protected_days=10, median_days=40)
    params = DiseaseParams(natural_immunity_waning=waning)
    n, T = 10_000, 60
    epi = EpiArrays.susceptible(n)
    epi.state[:] = DiseaseState.RECOVERED
    rng = np.random.default_rng(8)
    for _ in range(T):
        advance_states(epi, params, rng, include=epi.state == DiseaseState.RECOVERED)
    expected = 1.0 - np.prod(1.0 - waning(np.arange(T)))
    observed = np.mean(epi.state == DiseaseState.SUSCEPTIBLE)
    assert abs(observed - expected) <= 0.01


def test_default_waning_has_nine_month_median():
    w = NaturalWaning.delayed_constant()
    survival = np.cumprod(1.0 - w(np.arange(400)))
    assert np.all(w(np.arange(90)) == 0)
    assert survival[269] == pytest.approx(0.5, abs=0.005)


# --- vaccine waning ------------------------------------------------------------------

def _fixture_entry(doses, week):
    with open(DATA_DIR / "vaccine_waning.csv", newline="") as fh:
        for r in csv.DictReader(line for line in fh if not line.startswith("#")):
            if int(r["doses"]) == doses and int(r["week_index"]) == week:
                return float(r["infection_protection"]), float(r["transmission_reduction"])
    raise LookupError((doses, week))


def test_booster_week_zero_reads_fixture_table():
    table = VaccineWaningTable.read_csv()
    rec = ImmunityRecord(vaccinated=True, boosted=True, doses=3, days_since_last_dose=0)
    out = apply_vaccine_waning(rec, table)
    assert (out.infection_protection_multiplier, out.transmission_reduction_multiplier) == _fixture_entry(3, 0)


def test_week_zero_lookup_on_custom_table(tmp_path):
    path = tmp_path / "waning.csv"
    path.write_text("doses,week_index,infection_protection,transmission_reduction\n"
                    "3,0,0.67,0.3\n3,1,0.6,0.3\n")
    rec = ImmunityRecord(vaccinated=True, boosted=True, doses=3, days_since_last_dose=3)
    assert apply_vaccine_waning(rec, VaccineWaningTable.read_csv(path)).infection_protection_multiplier == 0.67


def test_weeks_beyond_table_hold_last_value():
    table = VaccineWaningTable.read_csv()
    last = len(table.infection_protection[2]) - 1
    far = ImmunityRecord(vaccinated=True, doses=2, days_since_last_dose=7 * (last + 30))
    assert apply_vaccine_waning(far, table).infection_protection_multiplier == _fixture_entry(2, last)[0]


def test_fixture_protection_wanes_monotonically():
    table = VaccineWaningTable.read_csv()
    for d in table.infection_protection:
        assert np.all(np.diff(table.infection_protection[d]) <= 0)


def test_unvaccinated_record_unchanged():
    rec = ImmunityRecord()
    assert apply_vaccine_waning(rec, VaccineWaningTable.read_csv()) is rec
    assert rec.infection_protection_multiplier == 0.0


def test_identical_records_wane_identically():
    table = VaccineWaningTable.read_csv()
    a = ImmunityRecord(vaccinated=True, doses=2, days_since_last_dose=100)
    b = ImmunityRecord(vaccinated=True, doses=2, days_since_last_dose=100)
    assert apply_vaccine_waning(a, table) == apply_vaccine_waning(b, table)


def test_waning_table_rejects_gaps(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text("doses,week_index,infection_protection,transmission_reduction\n2,0,0.5,0.1\n2,2,0.4,0.1\n")
    with pytest.raises(ConfigurationError):
        VaccineWaningTable.read_csv(path)


# --- immune escape -------------------------------------------------------------------

def _escape_fraction(escape, n=10_000, seed=0):
    epi = EpiArrays.susceptible(n)
    resolve_immune_escape_arrays(epi, np.arange(n), DiseaseParams(immune_escape=escape),
                                 np.random.default_rng(seed))
    return epi, np.mean(epi.state == DiseaseState.SUSCEPTIBLE)


def test_immune_escape_zero_keeps_everyone_recovered():
    epi, frac = _escape_fraction(0.0)
    assert frac == 0.0
    assert np.all(epi.state == DiseaseState.RECOVERED)
    assert epi.days_in_state.min() >= 60 and epi.days_in_state.max() <= 540


def test_immune_escape_one_voids_everyone():
    _, frac = _escape_fraction(1.0)
    assert frac == 1.0


def test_immune_escape_binomial_fraction():
    _, frac = _escape_fraction(0.4)
    assert abs(frac - 0.40) <= 0.01


def test_single_agent_immune_escape():
    agent = AgentEpiState(immunity=ImmunityRecord(prior_variant_infection=True))
    out = resolve_immune_escape(agent, DiseaseParams(immune_escape=0.0), np.random.default_rng(0))
    assert out.state == DiseaseState.RECOVERED
    assert out.immunity.prior_variant_infection
    assert 60 <= out.immunity.days_since_recovery <= 540


# --- parameter validation ------------------------------------------------------------

@pytest.mark.parametrize("bad", [
    dict(base_transmission_rate=1.5), dict(immune_escape=-0.1), dict(asymptomatic_fraction=2.0),
    dict(latent_duration=0), dict(infectious_duration=0), dict(asymptomatic_infectivity_multiplier=0.0),
    dict(superspreader_shape=-1.0),
])
def test_disease_params_validation(bad):
    with pytest.raises(ConfigurationError):
        DiseaseParams(**bad)


def test_immunity_record_invariants():
    with pytest.raises(ConfigurationError):
        ImmunityRecord(boosted=True, vaccinated=False)
    with pytest.raises(ConfigurationError):
        ImmunityRecord(infection_protection_multiplier=1.2)


def test_params_equality_and_dict():
    a, b = DiseaseParams(), DiseaseParams()
    assert a == b
    assert a.to_dict()["natural_immunity_waning"] == list(a.natural_immunity_waning.hazard)
    assert a.with_(immune_escape=0.5) != a
