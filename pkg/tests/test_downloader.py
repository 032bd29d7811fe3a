from unittest.mock import Mock, patch

import requests

from desmr.downloader import DatasetDownloader

CSV_BODY = "NJ,1.0,0.5\nNY,2.0,0.7\n"


def _response(text):
    response = Mock()
    response.text = text
    response.raise_for_status.return_value = None
    return response


def test_download_success(mock_requests_get, tmp_path):
    mock_requests_get.return_value = _response("state,x,target\n" + CSV_BODY)
    target = DatasetDownloader(url="https://example.org/crime.csv").download(str(tmp_path / "crime.csv"))
    assert target is not None
    assert target.read_text(encoding="utf-8").startswith("state,x,target")
    mock_requests_get.assert_called_once()


def test_download_adds_header(mock_requests_get, tmp_path):
    mock_requests_get.return_value = _response(CSV_BODY)
    target = DatasetDownloader(url="https://example.org/crime.csv").download(
        str(tmp_path / "crime.csv"), ["state", "x", "target"]
    )
    lines = target.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "state,x,target"
    assert lines[1] == "NJ,1.0,0.5"


def test_download_header_width_mismatch(mock_requests_get, tmp_path):
    mock_requests_get.return_value = _response(CSV_BODY)
    result = DatasetDownloader(url="https://example.org/crime.csv").download(str(tmp_path / "crime.csv"), ["a", "b"])
    assert result is None
    assert not (tmp_path / "crime.csv").exists()


def test_download_network_error(mock_requests_get, tmp_path):
    mock_requests_get.side_effect = requests.exceptions.ConnectionError("Network error")
    result = DatasetDownloader(url="https://example.org/crime.csv").download(str(tmp_path / "crime.csv"))
    assert result is None


def test_download_http_error(mock_requests_get, tmp_path):
    response = _response("")
    http_error = requests.exceptions.HTTPError("404")
    http_error.response = Mock(status_code=404)
    response.raise_for_status.side_effect = http_error
    mock_requests_get.return_value = response
    assert DatasetDownloader(url="https://example.org/crime.csv").download(str(tmp_path / "x.csv")) is None


def test_download_without_url(mock_requests_get, tmp_path):
    with patch("desmr.downloader.os.getenv", return_value=""):
        downloader = DatasetDownloader()
    assert downloader.download(str(tmp_path / "x.csv")) is None
    mock_requests_get.assert_not_called()


def test_fetch_uses_local_copy(mock_requests_get, tmp_path):
    local = tmp_path / "crime.csv"
    local.write_text("state,x\n", encoding="utf-8")
    assert DatasetDownloader(url="https://example.org/crime.csv").fetch(str(local)) == local
    mock_requests_get.assert_not_called()
