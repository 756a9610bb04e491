# tests/test_cli.py
import pytest

from cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_INCOMPLETE, EXIT_OK, main


def _generate(workdir, *extra):
    return main(['generate', '--scale', '8', '--nodes', '2', '--cores', '2', '--block-edges', '64',
                 '--seed', '3', '--workdir', str(workdir), '--watchdog', '30', *extra])


def test_nodes_must_be_a_power_of_two(tmp_path, capsys):
    assert main(['generate', '--scale', '8', '--nodes', '3', '--workdir', str(tmp_path)]) == EXIT_CONFIG
    assert "power of two" in capsys.readouterr().err


def test_bad_size_is_rejected_by_the_parser(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(['generate', '--scale', '8', '--mem-per-core', 'lots', '--workdir', str(tmp_path)])
    assert info.value.code == 2


def test_generate_validate_stats(tmp_path, capsys):
    workdir = tmp_path / 'run'
    assert _generate(workdir) == EXIT_OK
    out = capsys.readouterr().out
    assert "n0/csr.bin" in out and "n1/csr.bin" in out

    assert main(['validate', '--workdir', str(workdir)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "[ok] csr_matches_oracle" in out
    assert "FAIL" not in out

    assert main(['stats', '--workdir', str(workdir), '--per-core', '--plot']) == EXIT_OK
    out = capsys.readouterr().out
    assert "Per-phase summary" in out
    assert "phase,counter,value\n" in out and "\ngenerate,seq_writes," in out
    assert "Out-degree" in out
    assert "scale,nodes,cores,phase,seconds_norm,seq_reads_norm" in out


def test_config_file_with_flag_overrides(tmp_path, capsys):
    conf = tmp_path / 'cluster.env'
    conf.write_text("scale=7\nnb=2\nnc=1\nmmc=1MiB\nrmat_params=0.45,0.25,0.15,0.15\n", encoding='utf-8')
    workdir = tmp_path / 'run'
    assert main(['generate', '--config', str(conf), '--seed', '9', '--workdir', str(workdir)]) == EXIT_OK
    capsys.readouterr()
    assert main(['validate', '--workdir', str(workdir)]) == EXIT_OK


def test_validate_and_stats_on_an_empty_directory(tmp_path):
    assert main(['validate', '--workdir', str(tmp_path)]) == EXIT_INCOMPLETE
    assert main(['stats', '--workdir', str(tmp_path)]) == EXIT_INCOMPLETE


def test_out_of_order_phase_fails(tmp_path, capsys):
    assert _generate(tmp_path / 'run', '--phase', 'csr') == EXIT_FAILURE
    assert "phase 'csr'" in capsys.readouterr().err


def test_sorted_csr_needs_sorted_redistribution(tmp_path):
    assert _generate(tmp_path / 'run', '--redistribute', 'unordered') == EXIT_CONFIG
    assert _generate(tmp_path / 'run', '--redistribute', 'unordered', '--csr-variant', 'hash') == EXIT_OK


def test_sweep_command_writes_csv_and_figure(tmp_path, capsys):
    out = tmp_path / 'sweep'
    assert main(['sweep', '--kind', 'strong', '--scales', '6', '--nodes', '1', '2',
                 '--edge-factor', '2', '--block-edges', '32', '--workdir', str(out)]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "sweep_strong.csv" in printed and "sweep_strong.png" in printed
    assert (out / 'sweep_strong.csv').is_file()
    assert (out / 'sweep_strong.png').is_file()
    assert main(['sweep', '--kind', 'weak', '--scales', '6', '--nodes', '1', '3',
                 '--workdir', str(out)]) == EXIT_CONFIG
