import pytest

from harness.config import load_config
from harness.experiment import COMPARE_HEADER, compare, parse_sweep, sweep
from numeric.errors import ConfigError

TRADE_OFF_METHODS = ["generalist:D_nat_linf", "generalist:D_linf_l2", "at_vanilla"]


def by_method(rows):
    assert rows[0] == COMPARE_HEADER
    return {row[0]: dict(zip(COMPARE_HEADER[1:], map(float, row[1:]))) for row in rows[1:]}


class TestSweep:
    def test_parse(self):
        assert parse_sweep("sync.c=1, 3,5") == ("sync.c", [1, 3, 5])
        assert parse_sweep("generalist.gamma1=1.0-0.0,1.0-1.0-0.0") == (
            "generalist.gamma1", ["1.0-0.0", "1.0-1.0-0.0"])

    @pytest.mark.parametrize("text", ["sync.c", "sync.c=", "=1,2"])
    def test_malformed(self, text):
        with pytest.raises(ConfigError):
            parse_sweep(text)

    def test_one_block_of_rows_per_value(self, smoke_config_path, tmp_path):
        config = load_config(smoke_config_path, {"sync.t_prime": 1})
        out = tmp_path / "sweep.csv"
        rows = sweep(config, "sync.c", [1, 2], str(out), methods=["generalist:D_nat_linf", "at_vanilla"],
                     seeds=[0], progress=False)
        assert rows[0] == ["sync.c"] + COMPARE_HEADER
        assert [row[:2] for row in rows[1:]] == [["1", "generalist:D_nat_linf"], ["1", "at_vanilla"],
                                                 ["2", "generalist:D_nat_linf"], ["2", "at_vanilla"]]
        # the baseline ignores the sync schedule
        assert rows[2][2:] == rows[4][2:]
        assert out.read_text().splitlines()[0] == ",".join(rows[0])

    def test_unknown_key(self, smoke_config_path):
        with pytest.raises(ConfigError):
            sweep(load_config(smoke_config_path), "sync.period", [1], None, seeds=[0], progress=False)


@pytest.mark.slow
class TestTradeOff:
    def test_generalist_rows_against_vanilla_adversarial_training(self, default_config_path):
        rows = compare(load_config(default_config_path), None, methods=TRADE_OFF_METHODS,
                       seeds=[0, 1, 2, 3, 4], progress=False)
        table = by_method(rows)
        nat_linf, linf_l2 = table["generalist:D_nat_linf"], table["generalist:D_linf_l2"]
        vanilla = table["at_vanilla"]
        assert nat_linf["Natural"] >= vanilla["Natural"]
        assert nat_linf["PGD_inf"] >= vanilla["PGD_inf"] - 5.0
        assert linf_l2["Union"] >= vanilla["Union"]
