from sasd.cli import run

run()
